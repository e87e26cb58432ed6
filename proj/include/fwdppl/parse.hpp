// Recursive-descent frontend for the mini probabilistic language.
// A strict Stan subset: six ordered blocks, scalar/array declarations,
// assignments, target increments, sampling statements, for/if/reject.
// Anything else is rejected with a located diagnostic.
#pragma once

#include <cctype>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fwdppl/ast.hpp"

namespace fwdppl {

struct ParseError : std::runtime_error {
    SourceLoc loc;
    ParseError(SourceLoc l, const std::string& msg)
        : std::runtime_error(std::to_string(l.line) + ":" + std::to_string(l.col) + ": " + msg),
          loc(l) {}
};

namespace detail {

struct Token {
    enum class Kind { Ident, Int, Real, String, Punct, End };
    Kind kind;
    std::string text;
    double real_val = 0;
    long long int_val = 0;
    SourceLoc loc;
};

class Lexer {
public:
    explicit Lexer(const std::string& src) : src_(src) { advance(); }

    const Token& peek() const { return tok_; }

    Token next() {
        Token t = tok_;
        advance();
        return t;
    }

private:
    void advance() {
        skip_ws();
        tok_.loc = {line_, col_};
        if (pos_ >= src_.size()) {
            tok_.kind = Token::Kind::End;
            tok_.text = "<eof>";
            return;
        }
        char c = src_[pos_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                take();
            tok_.kind = Token::Kind::Ident;
            tok_.text = src_.substr(start, pos_ - start);
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            size_t start = pos_;
            bool is_real = false;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
                take();
            if (pos_ < src_.size() && src_[pos_] == '.') {
                is_real = true;
                take();
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
                    take();
            }
            if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
                is_real = true;
                take();
                if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) take();
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
                    take();
            }
            tok_.text = src_.substr(start, pos_ - start);
            if (is_real) {
                tok_.kind = Token::Kind::Real;
                tok_.real_val = std::strtod(tok_.text.c_str(), nullptr);
            } else {
                tok_.kind = Token::Kind::Int;
                tok_.int_val = std::strtoll(tok_.text.c_str(), nullptr, 10);
            }
            return;
        }
        if (c == '"') {
            take();
            size_t start = pos_;
            while (pos_ < src_.size() && src_[pos_] != '"') take();
            if (pos_ >= src_.size())
                throw ParseError(tok_.loc, "unterminated string literal");
            tok_.kind = Token::Kind::String;
            tok_.text = src_.substr(start, pos_ - start);
            take();  // closing quote
            return;
        }
        // multi-character punctuation first
        static const char* two[] = {"+=", "<=", ">=", "==", "!="};
        for (const char* p : two) {
            if (src_.compare(pos_, 2, p) == 0) {
                tok_.kind = Token::Kind::Punct;
                tok_.text = p;
                take();
                take();
                return;
            }
        }
        if (std::string("{}()[];=~+-*/^:,<>|").find(c) != std::string::npos) {
            tok_.kind = Token::Kind::Punct;
            tok_.text = std::string(1, c);
            take();
            return;
        }
        throw ParseError(tok_.loc, std::string("unexpected character '") + c + "'");
    }

    void skip_ws() {
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
                while (pos_ < src_.size() && src_[pos_] != '\n') take();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                take();
            } else {
                break;
            }
        }
    }

    void take() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    const std::string& src_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
    Token tok_;
};

class Parser {
public:
    explicit Parser(const std::string& src) : lex_(src) {}

    // Parses one standalone statement (no surrounding block, no identifier
    // validation) — used when reloading statements from serialized artifacts.
    StmtPtr parse_single_stmt() {
        auto s = parse_stmt(BlockKind::Model, {});
        const Token& t = lex_.peek();
        if (t.kind != Token::Kind::End)
            throw ParseError(t.loc, "trailing input after statement: '" + t.text + "'");
        return s;
    }

    Program parse_program() {
        Program prog;
        int last_block = -1;
        while (lex_.peek().kind != Token::Kind::End) {
            auto [kind, kind_loc] = parse_block_kind();
            for (const auto& [k, _] : prog.blocks)
                if (k == kind)
                    throw ParseError(kind_loc,
                                     std::string("duplicate block '") + block_name(kind) + "'");
            if (static_cast<int>(kind) < last_block)
                throw ParseError(kind_loc, std::string("block '") + block_name(kind) +
                                               "' out of order");
            last_block = static_cast<int>(kind);
            expect("{");
            std::vector<StmtPtr> stmts;
            while (!at_punct("}")) stmts.push_back(parse_stmt(kind, {}));
            expect("}");
            prog.blocks.emplace_back(kind, std::move(stmts));
        }
        validate(prog);
        return prog;
    }

private:
    std::pair<BlockKind, SourceLoc> parse_block_kind() {
        Token t = expect_ident();
        if (t.text == "data") return {BlockKind::Data, t.loc};
        if (t.text == "parameters") return {BlockKind::Parameters, t.loc};
        if (t.text == "model") return {BlockKind::Model, t.loc};
        if (t.text == "transformed") {
            Token u = expect_ident();
            if (u.text == "data") return {BlockKind::TransformedData, t.loc};
            if (u.text == "parameters") return {BlockKind::TransformedParameters, t.loc};
            throw ParseError(u.loc, "expected 'data' or 'parameters' after 'transformed'");
        }
        if (t.text == "generated") {
            Token u = expect_ident();
            if (u.text == "quantities") return {BlockKind::GeneratedQuantities, t.loc};
            throw ParseError(u.loc, "expected 'quantities' after 'generated'");
        }
        throw ParseError(t.loc, "expected a block keyword, got '" + t.text + "'");
    }

    StmtPtr parse_stmt(BlockKind block, std::vector<int> enclosing) {
        const Token& t = lex_.peek();
        if (t.kind != Token::Kind::Ident)
            throw ParseError(t.loc, "expected a statement, got '" + t.text + "'");

        if (t.text == "real" || t.text == "int" || t.text == "vector")
            return parse_decl(std::move(enclosing));
        if (t.text == "for") return parse_for(block, std::move(enclosing));
        if (t.text == "if") return parse_if(block, std::move(enclosing));
        if (t.text == "reject") return parse_reject(block, std::move(enclosing));
        if (t.text == "target") return parse_target(block, std::move(enclosing));

        // assignment or sampling statement
        auto s = make_stmt(std::move(enclosing));
        Token id = lex_.next();
        s->loc = id.loc;
        if (at_punct("[")) {
            lex_.next();
            s->lhs_index = parse_expr();
            expect("]");
            expect("=");
            s->kind = Stmt::Kind::Assign;
            s->lhs = id.text;
            s->rhs = parse_expr();
            expect(";");
            return s;
        }
        if (at_punct("=")) {
            lex_.next();
            s->kind = Stmt::Kind::Assign;
            s->lhs = id.text;
            s->rhs = parse_expr();
            expect(";");
            return s;
        }
        if (at_punct("~")) {
            lex_.next();
            if (block != BlockKind::Model)
                throw ParseError(id.loc, "sampling statement outside model block");
            s->kind = Stmt::Kind::Tilde;
            s->lhs = id.text;
            Token dist = expect_ident();
            s->dist = dist.text;
            if (!builtin_distributions().count(s->dist))
                throw ParseError(dist.loc, "unknown distribution '" + s->dist + "'");
            expect("(");
            if (!at_punct(")")) {
                s->args.push_back(parse_expr());
                while (at_punct(",")) {
                    lex_.next();
                    s->args.push_back(parse_expr());
                }
            }
            expect(")");
            expect(";");
            check_dist_arity(s->dist, s->args.size(), dist.loc);
            return s;
        }
        throw ParseError(lex_.peek().loc,
                         "expected '=', '~', or '[' after identifier '" + id.text + "'");
    }

    StmtPtr parse_decl(std::vector<int> enclosing) {
        auto s = make_stmt(std::move(enclosing));
        Token ty = lex_.next();
        s->loc = ty.loc;
        s->kind = Stmt::Kind::Decl;
        if (ty.text == "real") {
            s->type.base = TypeSpec::Base::Real;
            parse_constraint(s->type);
        } else if (ty.text == "int") {
            s->type.base = TypeSpec::Base::Int;
            parse_constraint(s->type);
        } else {
            s->type.base = TypeSpec::Base::Vector;
            parse_constraint(s->type);
            expect("[");
            s->type.dim = parse_expr();
            expect("]");
        }
        Token id = expect_ident();
        s->decl_name = id.text;
        if (at_punct("[")) {
            if (s->type.base == TypeSpec::Base::Vector)
                throw ParseError(lex_.peek().loc, "vector declarations take one dimension");
            lex_.next();
            s->type.dim = parse_expr();
            expect("]");
        }
        expect(";");
        return s;
    }

    // `<lower=.., upper=..>` bounds are recorded on the type but carry no
    // semantics in this subset (no Jacobian transforms).
    void parse_constraint(TypeSpec& type) {
        if (!at_punct("<")) return;
        lex_.next();
        while (true) {
            Token key = expect_ident();
            expect("=");
            ExprPtr bound = parse_additive();
            if (key.text == "lower") {
                type.lower = bound;
            } else if (key.text == "upper") {
                type.upper = bound;
            } else {
                throw ParseError(key.loc, "unsupported constraint '" + key.text + "'");
            }
            if (at_punct(",")) {
                lex_.next();
                continue;
            }
            break;
        }
        expect(">");
    }

    StmtPtr parse_for(BlockKind block, std::vector<int> enclosing) {
        auto s = make_stmt(enclosing);
        s->loc = lex_.next().loc;  // 'for'
        s->kind = Stmt::Kind::For;
        expect("(");
        s->loop_var = expect_ident().text;
        Token in = expect_ident();
        if (in.text != "in") throw ParseError(in.loc, "expected 'in'");
        s->lo = parse_expr();
        expect(":");
        s->hi = parse_expr();
        expect(")");
        expect("{");
        enclosing.push_back(s->id);
        while (!at_punct("}")) s->body.push_back(parse_stmt(block, enclosing));
        expect("}");
        return s;
    }

    StmtPtr parse_if(BlockKind block, std::vector<int> enclosing) {
        auto s = make_stmt(enclosing);
        s->loc = lex_.next().loc;  // 'if'
        s->kind = Stmt::Kind::IfElse;
        expect("(");
        s->cond = parse_expr();
        expect(")");
        expect("{");
        enclosing.push_back(s->id);
        while (!at_punct("}")) s->body.push_back(parse_stmt(block, enclosing));
        expect("}");
        if (lex_.peek().kind == Token::Kind::Ident && lex_.peek().text == "else") {
            lex_.next();
            expect("{");
            while (!at_punct("}")) s->else_body.push_back(parse_stmt(block, enclosing));
            expect("}");
        }
        return s;
    }

    StmtPtr parse_reject(BlockKind block, std::vector<int> enclosing) {
        auto s = make_stmt(std::move(enclosing));
        Token kw = lex_.next();
        s->loc = kw.loc;
        if (block != BlockKind::Model)
            throw ParseError(kw.loc, "reject statement outside model block");
        s->kind = Stmt::Kind::Reject;
        expect("(");
        Token msg = lex_.next();
        if (msg.kind != Token::Kind::String)
            throw ParseError(msg.loc, "reject takes a string message");
        s->message = msg.text;
        expect(")");
        expect(";");
        return s;
    }

    StmtPtr parse_target(BlockKind block, std::vector<int> enclosing) {
        auto s = make_stmt(std::move(enclosing));
        Token kw = lex_.next();
        s->loc = kw.loc;
        if (block != BlockKind::Model)
            throw ParseError(kw.loc, "density statement outside model block");
        expect("+=");
        s->kind = Stmt::Kind::TargetIncr;
        s->rhs = parse_expr();
        expect(";");
        return s;
    }

    // expr := comparison; comparison := additive (relop additive)?
    ExprPtr parse_expr() { return parse_comparison(); }

    ExprPtr parse_comparison() {
        ExprPtr lhs = parse_additive();
        static const char* relops[] = {"<", ">", "<=", ">=", "==", "!="};
        for (const char* op : relops) {
            if (at_punct(op)) {
                SourceLoc loc = lex_.next().loc;
                ExprPtr rhs = parse_additive();
                auto e = Expr::binary(op, lhs, rhs);
                const_cast<Expr&>(*e).loc = loc;
                return e;
            }
        }
        return lhs;
    }

    ExprPtr parse_additive() {
        ExprPtr lhs = parse_multiplicative();
        while (at_punct("+") || at_punct("-")) {
            std::string op = lex_.next().text;
            lhs = Expr::binary(op, lhs, parse_multiplicative());
        }
        return lhs;
    }

    ExprPtr parse_multiplicative() {
        ExprPtr lhs = parse_unary();
        while (at_punct("*") || at_punct("/")) {
            std::string op = lex_.next().text;
            lhs = Expr::binary(op, lhs, parse_unary());
        }
        return lhs;
    }

    // unary minus binds looser than '^': -x^2 parses as -(x^2)
    ExprPtr parse_unary() {
        if (at_punct("-")) {
            SourceLoc loc = lex_.next().loc;
            auto e = Expr::unary("-", parse_unary());
            const_cast<Expr&>(*e).loc = loc;
            return e;
        }
        return parse_power();
    }

    ExprPtr parse_power() {
        ExprPtr lhs = parse_primary();
        if (at_punct("^")) {
            lex_.next();
            return Expr::binary("^", lhs, parse_unary());  // right-associative
        }
        return lhs;
    }

    ExprPtr parse_primary() {
        Token t = lex_.next();
        switch (t.kind) {
        case Token::Kind::Int: {
            auto e = Expr::integer(t.int_val);
            const_cast<Expr&>(*e).loc = t.loc;
            return e;
        }
        case Token::Kind::Real: {
            auto e = Expr::real(t.real_val);
            const_cast<Expr&>(*e).loc = t.loc;
            return e;
        }
        case Token::Kind::Ident: {
            if (at_punct("(")) {
                lex_.next();
                std::vector<ExprPtr> args;
                bool bar_seen = false;
                if (!at_punct(")")) {
                    args.push_back(parse_expr());
                    while (at_punct(",") || at_punct("|")) {
                        // `dist_lpdf(v | a, b)` uses '|' after the variate
                        lex_.next();
                        args.push_back(parse_expr());
                    }
                    (void)bar_seen;
                }
                expect(")");
                if (!is_builtin_function(t.text))
                    throw ParseError(t.loc, "unknown function '" + t.text + "'");
                std::string suffix;
                std::string base = distribution_of_call(t.text, &suffix);
                if (!base.empty()) {
                    size_t want = dist_arity(base) + (suffix == "_rng" ? 0 : 1);
                    if (args.size() != want)
                        throw ParseError(t.loc, "'" + t.text + "' expects " +
                                                    std::to_string(want) + " arguments, got " +
                                                    std::to_string(args.size()));
                }
                auto e = Expr::call(t.text, std::move(args));
                const_cast<Expr&>(*e).loc = t.loc;
                return e;
            }
            if (at_punct("[")) {
                lex_.next();
                ExprPtr idx = parse_expr();
                expect("]");
                auto base = Expr::var(t.text);
                const_cast<Expr&>(*base).loc = t.loc;
                return Expr::index(base, idx);
            }
            auto e = Expr::var(t.text);
            const_cast<Expr&>(*e).loc = t.loc;
            return e;
        }
        case Token::Kind::Punct:
            if (t.text == "(") {
                ExprPtr e = parse_expr();
                expect(")");
                return e;
            }
            break;
        default:
            break;
        }
        throw ParseError(t.loc, "expected an expression, got '" + t.text + "'");
    }

    void check_dist_arity(const std::string& dist, size_t n, SourceLoc loc) {
        if (n != dist_arity(dist))
            throw ParseError(loc, "'" + dist + "' expects " + std::to_string(dist_arity(dist)) +
                                      " parameters, got " + std::to_string(n));
    }

    // ---- validation ------------------------------------------------------

    void validate(const Program& prog_in) {
        Program& prog = const_cast<Program&>(prog_in);
        std::set<std::string> declared;
        for (auto& [kind, stmts] : prog.blocks) {
            std::vector<std::set<std::string>> scopes{{}};
            for (auto& s : stmts) validate_stmt(prog, kind, *s, declared, scopes);
        }
    }

    void validate_stmt(Program& prog, BlockKind block, Stmt& s, std::set<std::string>& declared,
                       std::vector<std::set<std::string>>& loop_scopes) {
        auto check_uses = [&](const std::set<std::string>& vars, SourceLoc loc) {
            for (const auto& v : vars) {
                if (v == "target")
                    throw ParseError(loc, "'target' may only appear as 'target += ...'");
                bool is_loop_var = false;
                for (const auto& scope : loop_scopes)
                    if (scope.count(v)) is_loop_var = true;
                if (!is_loop_var && !declared.count(v))
                    throw ParseError(loc, "undeclared identifier '" + v + "'");
            }
        };
        switch (s.kind) {
        case Stmt::Kind::Decl: {
            if (s.decl_name == "target")
                throw ParseError(s.loc, "'target' is reserved");
            if (prog.symbols.count(s.decl_name))
                throw ParseError(s.loc, "duplicate declaration of '" + s.decl_name + "'");
            if (s.type.dim) {
                std::set<std::string> dim_vars;
                detail_expr_vars(*s.type.dim, dim_vars);
                check_uses(dim_vars, s.loc);
            }
            declared.insert(s.decl_name);
            prog.symbols[s.decl_name] = SymbolInfo{s.type, block, s.id};
            break;
        }
        case Stmt::Kind::Assign:
        case Stmt::Kind::TargetIncr:
        case Stmt::Kind::Tilde:
            check_uses(free_vars(s), s.loc);
            break;
        case Stmt::Kind::For: {
            std::set<std::string> range_vars;
            detail_expr_vars(*s.lo, range_vars);
            detail_expr_vars(*s.hi, range_vars);
            check_uses(range_vars, s.loc);
            loop_scopes.push_back({s.loop_var});
            for (auto& c : s.body) validate_stmt(prog, block, *c, declared, loop_scopes);
            loop_scopes.pop_back();
            break;
        }
        case Stmt::Kind::IfElse: {
            std::set<std::string> cond_vars;
            detail_expr_vars(*s.cond, cond_vars);
            check_uses(cond_vars, s.loc);
            for (auto& c : s.body) validate_stmt(prog, block, *c, declared, loop_scopes);
            for (auto& c : s.else_body) validate_stmt(prog, block, *c, declared, loop_scopes);
            break;
        }
        case Stmt::Kind::Reject:
            break;
        }
    }

    static void detail_expr_vars(const Expr& e, std::set<std::string>& out) {
        detail::expr_vars(e, {}, out);
    }

    // ---- token helpers ---------------------------------------------------

    StmtPtr make_stmt(std::vector<int> enclosing) {
        auto s = std::make_shared<Stmt>();
        s->id = next_id_++;
        s->enclosing_control = std::move(enclosing);
        return s;
    }

    bool at_punct(const std::string& p) const {
        return lex_.peek().kind == Token::Kind::Punct && lex_.peek().text == p;
    }

    Token expect(const std::string& p) {
        if (!at_punct(p))
            throw ParseError(lex_.peek().loc,
                             "expected '" + p + "', got '" + lex_.peek().text + "'");
        return lex_.next();
    }

    Token expect_ident() {
        if (lex_.peek().kind != Token::Kind::Ident)
            throw ParseError(lex_.peek().loc,
                             "expected an identifier, got '" + lex_.peek().text + "'");
        return lex_.next();
    }

    Lexer lex_;
    int next_id_ = 0;
};

}  // namespace detail

inline Program parse(const std::string& source) {
    return detail::Parser(source).parse_program();
}

inline StmtPtr parse_statement(const std::string& source) {
    return detail::Parser(source).parse_single_stmt();
}

}  // namespace fwdppl
