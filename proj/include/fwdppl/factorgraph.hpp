// Bipartite factor graphs extracted from the model block: one factor per
// density-affecting statement, with an edge to every data/parameter variable
// the statement depends on (directly or through intermediate assignments).
// Restricted variants drive prior and predictive sampling, and the canonical
// line-oriented document format makes graphs portable between tools.
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fwdppl/ast.hpp"
#include "fwdppl/dataflow.hpp"
#include "fwdppl/eval.hpp"
#include "fwdppl/parse.hpp"

namespace fwdppl {

struct FactorGraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Factor {
    enum class Form { TargetIncrement, Tilde, Reject };

    std::string id;
    StmtPtr statement;
    std::set<int> deps;  // statement ids this factor depends on
    Form form = Form::TargetIncrement;
    std::string pretty;                   // canonical display string
    std::set<std::string> held_constant;  // inputs fixed by a restriction
};

inline const char* form_name(Factor::Form f) {
    switch (f) {
    case Factor::Form::TargetIncrement: return "target";
    case Factor::Form::Tilde: return "tilde";
    case Factor::Form::Reject: return "reject";
    }
    return "?";
}

struct FactorGraph {
    std::set<std::string> variables;
    std::map<std::string, bool> is_data;  // variable -> declared in the data block
    std::vector<Factor> factors;          // ordered by id
    std::set<std::pair<std::string, std::string>> edges;  // (variable, factor id)
    std::vector<std::string> warnings;

    const Factor* factor(const std::string& id) const {
        for (const auto& f : factors)
            if (f.id == id) return &f;
        return nullptr;
    }

    std::set<std::string> neighbors(const std::string& factor_id) const {
        std::set<std::string> out;
        for (const auto& [v, f] : edges)
            if (f == factor_id) out.insert(v);
        return out;
    }

    std::set<std::string> factors_of(const std::string& var) const {
        std::set<std::string> out;
        for (const auto& [v, f] : edges)
            if (v == var) out.insert(f);
        return out;
    }
};

namespace detail {

inline std::string factor_id_for(const Stmt& s, std::set<std::string>& taken) {
    std::string id = "F" + std::to_string(s.loc.line);
    while (taken.count(id)) id += "_" + std::to_string(s.id);
    taken.insert(id);
    return id;
}

}  // namespace detail

inline std::vector<Factor> extract_factors(const Program& prog, const DependencyGraph& dep) {
    std::vector<Factor> out;
    std::set<std::string> taken_ids;
    const auto* model = prog.block(BlockKind::Model);
    if (!model) return out;
    std::vector<StmtPtr> stmts;
    {
        // pre-order walk so factors nested in control flow are included
        std::function<void(const std::vector<StmtPtr>&)> walk =
            [&](const std::vector<StmtPtr>& body) {
                for (const auto& s : body) {
                    if (s->is_density()) stmts.push_back(s);
                    walk(s->body);
                    walk(s->else_body);
                }
            };
        walk(*model);
    }
    for (const auto& s : stmts) {
        Factor f;
        f.id = detail::factor_id_for(*s, taken_ids);
        f.statement = s;
        f.deps = dep.predecessors(s->id);
        f.form = s->kind == Stmt::Kind::Tilde ? Factor::Form::Tilde
                 : s->kind == Stmt::Kind::Reject ? Factor::Form::Reject
                                                 : Factor::Form::TargetIncrement;
        f.pretty = pretty(*s);
        out.push_back(std::move(f));
    }
    return out;
}

inline FactorGraph build_factor_graph(const Program& prog) {
    auto cfg = build_cfg(prog);
    auto dep = dependency_graph(prog, cfg);

    FactorGraph g;
    for (const auto& v : prog.data_vars()) {
        g.variables.insert(v);
        g.is_data[v] = true;
    }
    for (const auto& v : prog.parameter_vars()) {
        g.variables.insert(v);
        g.is_data[v] = false;
    }

    for (auto& f : extract_factors(prog, dep)) {
        auto vd = dependent_vars(*f.statement, dep, prog);
        std::set<std::string> nbrs;
        for (const auto& v : vd)
            if (g.variables.count(v)) nbrs.insert(v);
        if (nbrs.empty()) {
            g.warnings.push_back("dropping constant factor " + f.id + ": " + f.pretty);
            continue;
        }
        for (const auto& v : nbrs) g.edges.insert({v, f.id});
        g.factors.push_back(std::move(f));
    }
    return g;
}

inline FactorGraph restrict_for_prior(const FactorGraph& g,
                                      const std::set<std::string>& data_vars) {
    std::set<std::string> removed_factors;
    for (const auto& [v, fid] : g.edges)
        if (data_vars.count(v)) removed_factors.insert(fid);

    FactorGraph out;
    for (const auto& v : g.variables)
        if (!data_vars.count(v)) {
            out.variables.insert(v);
            out.is_data[v] = g.is_data.at(v);
        }
    for (const auto& f : g.factors)
        if (!removed_factors.count(f.id)) out.factors.push_back(f);
    for (const auto& [v, fid] : g.edges)
        if (!data_vars.count(v) && !removed_factors.count(fid)) out.edges.insert({v, fid});

    for (const auto& v : out.variables)
        if (out.factors_of(v).empty())
            throw FactorGraphError("parameter has no prior: " + v);
    return out;
}

// Variables that occur in variate position of some density statement: the
// left-hand side of `~`, or the first argument of an lpdf/lpmf call.
inline std::set<std::string> variate_vars(const FactorGraph& g) {
    std::set<std::string> out;
    for (const auto& f : g.factors) {
        const Stmt& s = *f.statement;
        if (s.kind == Stmt::Kind::Tilde) {
            out.insert(s.lhs);
        } else if (s.kind == Stmt::Kind::TargetIncr && s.rhs &&
                   s.rhs->kind == Expr::Kind::Call && !s.rhs->args.empty()) {
            std::string suffix;
            if (!distribution_of_call(s.rhs->name, &suffix).empty() &&
                (suffix == "_lpdf" || suffix == "_lpmf") &&
                s.rhs->args[0]->kind == Expr::Kind::Var)
                out.insert(s.rhs->args[0]->name);
        }
    }
    return out;
}

inline FactorGraph restrict_for_predictive(const FactorGraph& g,
                                           const std::set<std::string>& param_vars) {
    // parameters become held-constant inputs, as do data variables that never
    // occur in variate position (covariates like measurement scales)
    auto variates = variate_vars(g);
    std::set<std::string> held;
    for (const auto& v : g.variables)
        if (param_vars.count(v) || !variates.count(v)) held.insert(v);

    FactorGraph out;
    for (const auto& v : g.variables)
        if (!held.count(v)) {
            out.variables.insert(v);
            out.is_data[v] = g.is_data.at(v);
        }
    for (const auto& f : g.factors) {
        std::set<std::string> nbrs, fixed;
        for (const auto& v : g.neighbors(f.id))
            (held.count(v) ? fixed : nbrs).insert(v);
        if (nbrs.empty()) continue;  // factor over held inputs only
        Factor copy = f;
        copy.held_constant = std::move(fixed);
        for (const auto& v : nbrs) out.edges.insert({v, copy.id});
        out.factors.push_back(std::move(copy));
    }
    for (const auto& v : out.variables)
        if (out.factors_of(v).empty())
            throw FactorGraphError("data variable has no likelihood: " + v);
    return out;
}

// ---------------------------------------------------------------------------
// Canonical document format (line-oriented, bit-exact):
//   factorgraph v1
//   var <name> kind=<data|param>
//   factor <id> form=<target|tilde|reject> stmt="<pretty source>" deps=<id,...>
//   edge <varname> <factorid>

namespace detail {

inline std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::string serialize(const FactorGraph& g) {
    std::ostringstream out;
    out << "factorgraph v1\n";
    for (const auto& v : g.variables)
        out << "var " << v << " kind=" << (g.is_data.at(v) ? "data" : "param") << "\n";
    std::vector<const Factor*> ordered;
    for (const auto& f : g.factors) ordered.push_back(&f);
    std::sort(ordered.begin(), ordered.end(),
              [](const Factor* a, const Factor* b) { return a->id < b->id; });
    for (const Factor* f : ordered) {
        out << "factor " << f->id << " form=" << form_name(f->form)
            << " stmt=" << detail::quote(f->pretty) << " deps=";
        bool first = true;
        for (int d : f->deps) {
            if (!first) out << ",";
            out << d;
            first = false;
        }
        out << "\n";
    }
    for (const auto& [v, fid] : g.edges) out << "edge " << v << " " << fid << "\n";
    return out.str();
}

inline FactorGraph deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "factorgraph v1")
        throw FactorGraphError("factor-graph document must start with 'factorgraph v1'");

    FactorGraph g;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fail = [&](const std::string& msg) -> FactorGraphError {
            return FactorGraphError("line " + std::to_string(lineno) + ": " + msg);
        };
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "var") {
            std::string name, kind;
            ls >> name >> kind;
            if (name.empty() || (kind != "kind=data" && kind != "kind=param"))
                throw fail("malformed var line");
            g.variables.insert(name);
            g.is_data[name] = kind == "kind=data";
        } else if (word == "factor") {
            Factor f;
            std::string form;
            ls >> f.id >> form;
            if (f.id.empty() || form.rfind("form=", 0) != 0) throw fail("malformed factor line");
            form = form.substr(5);
            if (form == "target") f.form = Factor::Form::TargetIncrement;
            else if (form == "tilde") f.form = Factor::Form::Tilde;
            else if (form == "reject") f.form = Factor::Form::Reject;
            else throw fail("unknown factor form '" + form + "'");
            // quoted statement text
            auto q0 = line.find("stmt=\"");
            if (q0 == std::string::npos) throw fail("missing stmt field");
            std::string stmt_text;
            size_t i = q0 + 6;
            for (; i < line.size() && line[i] != '"'; ++i) {
                if (line[i] == '\\' && i + 1 < line.size()) ++i;
                stmt_text += line[i];
            }
            if (i >= line.size()) throw fail("unterminated stmt string");
            auto d0 = line.find("deps=", i);
            if (d0 == std::string::npos) throw fail("missing deps field");
            std::string deps = line.substr(d0 + 5);
            std::istringstream ds(deps);
            std::string part;
            while (std::getline(ds, part, ','))
                if (!part.empty()) f.deps.insert(std::stoi(part));
            f.pretty = stmt_text;
            try {
                f.statement = parse_statement(stmt_text);
            } catch (const ParseError& e) {
                throw fail("unparseable stmt: " + std::string(e.what()));
            }
            if (g.factor(f.id)) throw fail("duplicate factor id " + f.id);
            g.factors.push_back(std::move(f));
        } else if (word == "edge") {
            std::string v, fid;
            ls >> v >> fid;
            if (!g.variables.count(v)) throw fail("edge references unknown variable " + v);
            if (!g.factor(fid)) throw fail("edge references unknown factor " + fid);
            g.edges.insert({v, fid});
        } else {
            throw fail("unknown directive '" + word + "'");
        }
    }
    return g;
}

inline std::string to_dot(const FactorGraph& g) {
    std::string out = "graph factorgraph {\n";
    for (const auto& v : g.variables)
        out += "  " + v + " [shape=ellipse];\n";
    std::vector<const Factor*> ordered;
    for (const auto& f : g.factors) ordered.push_back(&f);
    std::sort(ordered.begin(), ordered.end(),
              [](const Factor* a, const Factor* b) { return a->id < b->id; });
    for (const Factor* f : ordered) {
        std::string escaped;
        for (char c : f->pretty) {
            if (c == '"' || c == '\\') escaped += '\\';
            escaped += c;
        }
        out += "  " + f->id + " [shape=box, label=\"" + f->id + ": " + escaped + "\"];\n";
    }
    for (const auto& [v, fid] : g.edges) out += "  " + v + " -- " + fid + ";\n";
    out += "}\n";
    return out;
}

namespace detail {

inline bool body_contains(const std::vector<StmtPtr>& body, int id) {
    for (const auto& s : body) {
        if (s->id == id) return true;
        if (body_contains(s->body, id) || body_contains(s->else_body, id)) return true;
    }
    return false;
}

// A factor nested in control flow must be evaluated under its guards: rebuild
// the enclosing for/if chain with only this statement inside.
inline StmtPtr wrap_in_control(const Program& prog, const StmtPtr& stmt) {
    StmtPtr cur = stmt;
    const auto& ctrl = stmt->enclosing_control;
    for (auto it = ctrl.rbegin(); it != ctrl.rend(); ++it) {
        StmtPtr orig = prog.stmt_by_id(*it);
        auto copy = std::make_shared<Stmt>(*orig);
        if (copy->kind == Stmt::Kind::IfElse && body_contains(orig->else_body, stmt->id)) {
            copy->body.clear();
            copy->else_body = {cur};
        } else {
            copy->body = {cur};
            copy->else_body.clear();
        }
        cur = copy;
    }
    return cur;
}

}  // namespace detail

// Log joint density of the graph at an environment: sum of factor terms.
// Each factor re-executes its dependency slice so intermediates are current.
inline double graph_log_density(const FactorGraph& g, const Program& prog,
                                const Environment& env0) {
    Environment env = env0;
    double total = 0.0;
    // execute transformed blocks once: factor statements may read intermediates
    for (BlockKind k : {BlockKind::TransformedData, BlockKind::TransformedParameters}) {
        const auto* stmts = prog.block(k);
        if (!stmts) continue;
        double ignore = 0.0;
        Executor ex(env, nullptr, &ignore);
        for (const auto& s : *stmts) ex.exec(*s);
    }
    for (const auto& f : g.factors) {
        double term = 0.0;
        Executor ex(env, nullptr, &term);
        try {
            ex.exec(*detail::wrap_in_control(prog, f.statement));
        } catch (const RejectSignal&) {
            return kNegInf;
        }
        total += term;
    }
    return total;
}

}  // namespace fwdppl
