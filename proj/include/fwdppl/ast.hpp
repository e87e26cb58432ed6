// Abstract syntax for the mini probabilistic language: expressions,
// statements, block-structured programs, and the canonical pretty-printer.
// Statement ids are assigned in source (pre-)order and are stable across
// pretty-print/reparse round trips.
#pragma once

#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fwdppl {

enum class BlockKind {
    Data,
    TransformedData,
    Parameters,
    TransformedParameters,
    Model,
    GeneratedQuantities,
};

inline const char* block_name(BlockKind k) {
    switch (k) {
    case BlockKind::Data: return "data";
    case BlockKind::TransformedData: return "transformed data";
    case BlockKind::Parameters: return "parameters";
    case BlockKind::TransformedParameters: return "transformed parameters";
    case BlockKind::Model: return "model";
    case BlockKind::GeneratedQuantities: return "generated quantities";
    }
    return "?";
}

struct SourceLoc {
    int line = 0;
    int col = 0;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { RealLit, IntLit, Var, Index, Unary, Binary, Call };

    Kind kind;
    double real_val = 0.0;
    long long int_val = 0;
    std::string name;            // Var / Call
    std::string op;              // Unary ("-") / Binary operator spelling
    std::vector<ExprPtr> args;   // operands, call arguments, [base, index]
    SourceLoc loc;

    static ExprPtr real(double v) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::RealLit;
        e->real_val = v;
        return e;
    }
    static ExprPtr integer(long long v) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::IntLit;
        e->int_val = v;
        return e;
    }
    static ExprPtr var(std::string n) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Var;
        e->name = std::move(n);
        return e;
    }
    static ExprPtr index(ExprPtr base, ExprPtr idx) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Index;
        e->args = {std::move(base), std::move(idx)};
        return e;
    }
    static ExprPtr unary(std::string o, ExprPtr operand) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Unary;
        e->op = std::move(o);
        e->args = {std::move(operand)};
        return e;
    }
    static ExprPtr binary(std::string o, ExprPtr lhs, ExprPtr rhs) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Binary;
        e->op = std::move(o);
        e->args = {std::move(lhs), std::move(rhs)};
        return e;
    }
    static ExprPtr call(std::string fn, std::vector<ExprPtr> as) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Call;
        e->name = std::move(fn);
        e->args = std::move(as);
        return e;
    }
};

struct TypeSpec {
    enum class Base { Real, Int, Vector };
    Base base = Base::Real;
    ExprPtr dim;  // null for scalars; element count for vector[n] / real[n] / int[n]
    ExprPtr lower, upper;  // recorded from <lower=..,upper=..>, not otherwise used

    bool is_array() const { return dim != nullptr; }
    bool is_int() const { return base == Base::Int; }
};

struct Stmt;
using StmtPtr = std::shared_ptr<Stmt>;

struct Stmt {
    enum class Kind { Decl, Assign, TargetIncr, Tilde, For, IfElse, Reject };

    Kind kind;
    int id = -1;
    SourceLoc loc;
    std::vector<int> enclosing_control;  // ids of enclosing for/if statements, outermost first

    // Decl
    TypeSpec type;
    std::string decl_name;

    // Assign: lhs (optionally indexed) = rhs
    std::string lhs;
    ExprPtr lhs_index;  // null for whole-variable assignment
    ExprPtr rhs;        // Assign rhs / TargetIncr increment

    // Tilde: lhs ~ dist(args)
    std::string dist;
    std::vector<ExprPtr> args;

    // For
    std::string loop_var;
    ExprPtr lo, hi;

    // IfElse
    ExprPtr cond;

    std::vector<StmtPtr> body;       // For / IfElse then-branch
    std::vector<StmtPtr> else_body;  // IfElse else-branch

    // Reject
    std::string message;

    bool is_density() const {
        return kind == Kind::TargetIncr || kind == Kind::Tilde || kind == Kind::Reject;
    }
};

struct SymbolInfo {
    TypeSpec type;
    BlockKind block = BlockKind::Data;
    int decl_stmt_id = -1;
};

struct Program {
    std::vector<std::pair<BlockKind, std::vector<StmtPtr>>> blocks;
    std::map<std::string, SymbolInfo> symbols;

    const std::vector<StmtPtr>* block(BlockKind k) const {
        for (const auto& [kind, stmts] : blocks)
            if (kind == k) return &stmts;
        return nullptr;
    }

    // All statements, pre-order, in source order.
    std::vector<StmtPtr> all_statements() const {
        std::vector<StmtPtr> out;
        for (const auto& [kind, stmts] : blocks) flatten(stmts, out);
        return out;
    }

    StmtPtr stmt_by_id(int id) const {
        for (const auto& s : all_statements())
            if (s->id == id) return s;
        throw std::out_of_range("no statement with id " + std::to_string(id));
    }

    std::set<std::string> vars_in_blocks(std::initializer_list<BlockKind> kinds) const {
        std::set<std::string> out;
        for (const auto& [name, info] : symbols)
            for (BlockKind k : kinds)
                if (info.block == k) out.insert(name);
        return out;
    }

    std::set<std::string> data_vars() const { return vars_in_blocks({BlockKind::Data}); }
    std::set<std::string> parameter_vars() const { return vars_in_blocks({BlockKind::Parameters}); }

private:
    static void flatten(const std::vector<StmtPtr>& stmts, std::vector<StmtPtr>& out) {
        for (const auto& s : stmts) {
            out.push_back(s);
            flatten(s->body, out);
            flatten(s->else_body, out);
        }
    }
};

// ---------------------------------------------------------------------------
// Pretty printing. The output reparses to a structurally identical program;
// it is also the canonical form used in factor-graph documents and prompts.

namespace detail {

inline int precedence(const std::string& op) {
    if (op == "^") return 5;
    if (op == "*" || op == "/") return 4;
    if (op == "+" || op == "-") return 3;
    return 2;  // comparisons
}

inline void print_expr(const Expr& e, std::string& out, int parent_prec);

inline void print_operand(const ExprPtr& e, std::string& out, int prec) {
    print_expr(*e, out, prec);
}

inline void print_expr(const Expr& e, std::string& out, int parent_prec) {
    switch (e.kind) {
    case Expr::Kind::RealLit: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", e.real_val);
        std::string lit = buf;
        if (lit.find_first_of(".e") == std::string::npos) lit += ".0";
        out += lit;
        break;
    }
    case Expr::Kind::IntLit:
        out += std::to_string(e.int_val);
        break;
    case Expr::Kind::Var:
        out += e.name;
        break;
    case Expr::Kind::Index:
        print_operand(e.args[0], out, 6);
        out += "[";
        print_operand(e.args[1], out, 0);
        out += "]";
        break;
    case Expr::Kind::Unary: {
        // unary minus sits between '*' (4) and '^' (5)
        bool parens = parent_prec > 4;
        if (parens) out += "(";
        out += "-";
        print_operand(e.args[0], out, 5);
        if (parens) out += ")";
        break;
    }
    case Expr::Kind::Binary: {
        int prec = precedence(e.op);
        bool parens = prec < parent_prec;
        if (parens) out += "(";
        bool right_assoc = e.op == "^";
        print_operand(e.args[0], out, right_assoc ? prec + 1 : prec);
        out += e.op == "^" ? e.op : " " + e.op + " ";
        print_operand(e.args[1], out, right_assoc ? prec : prec + 1);
        if (parens) out += ")";
        break;
    }
    case Expr::Kind::Call:
        out += e.name + "(";
        for (size_t i = 0; i < e.args.size(); ++i) {
            if (i) out += ", ";
            print_operand(e.args[i], out, 0);
        }
        out += ")";
        break;
    }
}

}  // namespace detail

inline std::string pretty(const Expr& e) {
    std::string out;
    detail::print_expr(e, out, 0);
    return out;
}

inline std::string pretty_type(const TypeSpec& t, const std::string& name) {
    std::string out;
    switch (t.base) {
    case TypeSpec::Base::Real: out = "real"; break;
    case TypeSpec::Base::Int: out = "int"; break;
    case TypeSpec::Base::Vector: out = "vector"; break;
    }
    if (t.lower || t.upper) {
        out += "<";
        if (t.lower) out += "lower=" + pretty(*t.lower);
        if (t.lower && t.upper) out += ", ";
        if (t.upper) out += "upper=" + pretty(*t.upper);
        out += ">";
    }
    if (t.base == TypeSpec::Base::Vector) {
        out += "[" + pretty(*t.dim) + "] " + name;
    } else {
        out += " " + name;
        if (t.dim) out += "[" + pretty(*t.dim) + "]";
    }
    return out;
}

inline void pretty_stmt(const Stmt& s, std::string& out, int indent);

inline void pretty_block_body(const std::vector<StmtPtr>& stmts, std::string& out, int indent) {
    for (const auto& s : stmts) pretty_stmt(*s, out, indent);
}

inline void pretty_stmt(const Stmt& s, std::string& out, int indent) {
    std::string pad(static_cast<size_t>(indent) * 2, ' ');
    switch (s.kind) {
    case Stmt::Kind::Decl:
        out += pad + pretty_type(s.type, s.decl_name) + ";\n";
        break;
    case Stmt::Kind::Assign:
        out += pad + s.lhs;
        if (s.lhs_index) out += "[" + pretty(*s.lhs_index) + "]";
        out += " = " + pretty(*s.rhs) + ";\n";
        break;
    case Stmt::Kind::TargetIncr:
        out += pad + "target += " + pretty(*s.rhs) + ";\n";
        break;
    case Stmt::Kind::Tilde: {
        out += pad + s.lhs + " ~ " + s.dist + "(";
        for (size_t i = 0; i < s.args.size(); ++i) {
            if (i) out += ", ";
            out += pretty(*s.args[i]);
        }
        out += ");\n";
        break;
    }
    case Stmt::Kind::For:
        out += pad + "for (" + s.loop_var + " in " + pretty(*s.lo) + ":" + pretty(*s.hi) + ") {\n";
        pretty_block_body(s.body, out, indent + 1);
        out += pad + "}\n";
        break;
    case Stmt::Kind::IfElse:
        out += pad + "if (" + pretty(*s.cond) + ") {\n";
        pretty_block_body(s.body, out, indent + 1);
        out += pad + "}";
        if (!s.else_body.empty()) {
            out += " else {\n";
            pretty_block_body(s.else_body, out, indent + 1);
            out += pad + "}";
        }
        out += "\n";
        break;
    case Stmt::Kind::Reject:
        out += pad + "reject(\"" + s.message + "\");\n";
        break;
    }
}

// Single-line canonical rendering of one statement (compound statements keep
// their body on following lines).
inline std::string pretty(const Stmt& s) {
    std::string out;
    pretty_stmt(s, out, 0);
    if (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
}

inline std::string pretty(const Program& p) {
    std::string out;
    for (const auto& [kind, stmts] : p.blocks) {
        out += std::string(block_name(kind)) + " {\n";
        pretty_block_body(stmts, out, 1);
        out += "}\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Builtin name tables shared by the parser, recognizer, and runtime.

inline const std::set<std::string>& builtin_distributions() {
    static const std::set<std::string> dists = {
        "normal", "lognormal", "exponential", "gamma", "beta",
        "uniform", "bernoulli", "poisson", "binomial",
    };
    return dists;
}

inline const std::set<std::string>& builtin_math_functions() {
    static const std::set<std::string> fns = {
        "log", "exp", "sqrt", "pow", "pi", "abs", "square",
    };
    return fns;
}

// normal_lpdf / normal_rng / bernoulli_lpmf / ... -> base distribution name,
// empty string when the callee is not a distribution-family call.
inline std::string distribution_of_call(const std::string& fn, std::string* suffix = nullptr) {
    for (const char* suf : {"_lpdf", "_lpmf", "_rng", "_cdf"}) {
        std::string s = suf;
        if (fn.size() > s.size() && fn.compare(fn.size() - s.size(), s.size(), s) == 0) {
            std::string base = fn.substr(0, fn.size() - s.size());
            if (builtin_distributions().count(base)) {
                if (suffix) *suffix = s;
                return base;
            }
        }
    }
    return "";
}

// parameter count of a builtin distribution
inline size_t dist_arity(const std::string& dist) {
    if (dist == "exponential" || dist == "bernoulli" || dist == "poisson") return 1;
    return 2;
}

inline bool is_discrete_distribution(const std::string& dist) {
    return dist == "bernoulli" || dist == "poisson" || dist == "binomial";
}

inline bool is_builtin_function(const std::string& fn) {
    return builtin_math_functions().count(fn) > 0 || !distribution_of_call(fn).empty();
}

// ---------------------------------------------------------------------------
// Free variables of a statement: every non-builtin identifier occurring
// syntactically in the statement, excluding `target` and loop indices bound
// by the statement itself. Declaration dimensions are shape metadata and do
// not contribute.

namespace detail {

inline void expr_vars(const Expr& e, const std::set<std::string>& bound,
                      std::set<std::string>& out) {
    switch (e.kind) {
    case Expr::Kind::Var:
        if (!bound.count(e.name)) out.insert(e.name);
        break;
    case Expr::Kind::Call:
        for (const auto& a : e.args) expr_vars(*a, bound, out);
        break;
    default:
        for (const auto& a : e.args) expr_vars(*a, bound, out);
        break;
    }
}

inline void stmt_vars(const Stmt& s, std::set<std::string> bound, std::set<std::string>& out) {
    switch (s.kind) {
    case Stmt::Kind::Decl:
        out.insert(s.decl_name);
        break;
    case Stmt::Kind::Assign:
        out.insert(s.lhs);
        if (s.lhs_index) expr_vars(*s.lhs_index, bound, out);
        expr_vars(*s.rhs, bound, out);
        break;
    case Stmt::Kind::TargetIncr:
        expr_vars(*s.rhs, bound, out);
        break;
    case Stmt::Kind::Tilde:
        if (!bound.count(s.lhs)) out.insert(s.lhs);
        for (const auto& a : s.args) expr_vars(*a, bound, out);
        break;
    case Stmt::Kind::For:
        expr_vars(*s.lo, bound, out);
        expr_vars(*s.hi, bound, out);
        bound.insert(s.loop_var);
        for (const auto& c : s.body) stmt_vars(*c, bound, out);
        break;
    case Stmt::Kind::IfElse:
        expr_vars(*s.cond, bound, out);
        for (const auto& c : s.body) stmt_vars(*c, bound, out);
        for (const auto& c : s.else_body) stmt_vars(*c, bound, out);
        break;
    case Stmt::Kind::Reject:
        break;
    }
}

}  // namespace detail

inline std::set<std::string> free_vars(const Stmt& s) {
    std::set<std::string> out;
    detail::stmt_vars(s, {}, out);
    return out;
}

}  // namespace fwdppl
