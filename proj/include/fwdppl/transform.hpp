// The core transformation: detect recognizable edges, encode the soundness
// conditions as a propositional formula (rules 1-8), enumerate sound edge
// selection sets, contract a selection into a directed acyclic graph with a
// factor assignment, build user queries for ambiguous constant-normalized
// densities, filter by the answers, and pick a canonical survivor.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fwdppl/factorgraph.hpp"
#include "fwdppl/satcore.hpp"

namespace fwdppl {

struct TransformError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An edge selection set s ⊆ E: (variable, factor-id) pairs, at most one
// pair per factor.
struct EdgeSelectionSet {
    std::set<std::pair<std::string, std::string>> edges;

    bool operator<(const EdgeSelectionSet& o) const { return edges < o.edges; }
    bool operator==(const EdgeSelectionSet& o) const { return edges == o.edges; }

    // F(v, s): the factors s assigns to v
    std::set<std::string> factors_of(const std::string& var) const {
        std::set<std::string> out;
        for (const auto& [v, f] : edges)
            if (v == var) out.insert(f);
        return out;
    }
};

struct Dag {
    std::set<std::string> variables;
    std::set<std::pair<std::string, std::string>> edges;  // (from, to)
    std::map<std::string, std::set<std::string>> assignment;  // variable -> factor ids
    EdgeSelectionSet source;

    std::set<std::string> parents(const std::string& v) const {
        std::set<std::string> out;
        for (const auto& [a, b] : edges)
            if (b == v) out.insert(a);
        return out;
    }

    std::set<std::string> roots() const {
        std::set<std::string> out = variables;
        for (const auto& [a, b] : edges) out.erase(b);
        return out;
    }

    // Topological order; declaration/lexicographic tie-break is applied by
    // callers who know the declaration order.
    std::vector<std::string> topo_order(const std::vector<std::string>& preference) const {
        std::map<std::string, int> pref;
        for (size_t i = 0; i < preference.size(); ++i) pref[preference[i]] = static_cast<int>(i);
        auto rank = [&](const std::string& v) {
            auto it = pref.find(v);
            return it == pref.end() ? static_cast<int>(preference.size()) : it->second;
        };
        std::map<std::string, int> indegree;
        for (const auto& v : variables) indegree[v] = 0;
        for (const auto& [a, b] : edges) ++indegree[b];
        std::vector<std::string> out;
        std::set<std::string> pending = variables;
        while (!pending.empty()) {
            std::string best;
            for (const auto& v : pending)
                if (indegree[v] == 0 &&
                    (best.empty() || rank(v) < rank(best) ||
                     (rank(v) == rank(best) && v < best)))
                    best = v;
            if (best.empty()) throw TransformError("internal error: DAG contains a cycle");
            out.push_back(best);
            pending.erase(best);
            for (const auto& [a, b] : edges)
                if (a == best && pending.count(b)) --indegree[b];
        }
        return out;
    }
};

struct RecognizableEdge {
    std::string var;
    std::string factor_id;
    std::string dist;            // matched distribution name
    std::vector<ExprPtr> args;   // distribution arguments
};

struct RecognizableSet {
    std::vector<RecognizableEdge> edges;

    bool contains(const std::string& v, const std::string& f) const {
        for (const auto& e : edges)
            if (e.var == v && e.factor_id == f) return true;
        return false;
    }
    std::set<std::string> covered_vars() const {
        std::set<std::string> out;
        for (const auto& e : edges) out.insert(e.var);
        return out;
    }
    std::set<std::pair<std::string, std::string>> as_pairs() const {
        std::set<std::pair<std::string, std::string>> out;
        for (const auto& e : edges) out.insert({e.var, e.factor_id});
        return out;
    }
};

struct Query {
    std::string var;
    std::set<std::string> factor_ids;  // F(v, s) candidate
    std::string rendering;

    bool operator<(const Query& o) const {
        return std::tie(var, factor_ids) < std::tie(o.var, o.factor_ids);
    }
};

// ---------------------------------------------------------------------------
// Recognizable edges: a factor statement of the exact shape `v ~ dist(args)`
// or `target += dist_lpdf(v | args)` where v is a bare variable of the graph
// and does not occur in the arguments. If several factors match the same
// variable, none is asserted — the queries disambiguate instead.

// Matches the exact statement shapes `v ~ dist(args)` and
// `target += dist_lpdf(v | args)` with v a bare variable not occurring in
// the arguments. Reject statements never match.
inline bool recognizable_form(const Stmt& s, std::string* out_var, std::string* out_dist,
                              std::vector<ExprPtr>* out_args) {
    std::string var, dist;
    std::vector<ExprPtr> args;
    // a statement nested in control flow contributes conditionally and is
    // therefore not a complete constant-normalized density on its own
    if (!s.enclosing_control.empty()) return false;
    if (s.kind == Stmt::Kind::Tilde) {
        var = s.lhs;
        dist = s.dist;
        args = s.args;
    } else if (s.kind == Stmt::Kind::TargetIncr && s.rhs && s.rhs->kind == Expr::Kind::Call) {
        std::string suffix;
        std::string d = distribution_of_call(s.rhs->name, &suffix);
        if (d.empty() || (suffix != "_lpdf" && suffix != "_lpmf")) return false;
        if (s.rhs->args.empty() || s.rhs->args[0]->kind != Expr::Kind::Var) return false;
        var = s.rhs->args[0]->name;
        dist = d;
        args.assign(s.rhs->args.begin() + 1, s.rhs->args.end());
    } else {
        return false;
    }
    for (const auto& a : args) {
        std::set<std::string> fv;
        detail::expr_vars(*a, {}, fv);
        if (fv.count(var)) return false;
    }
    if (out_var) *out_var = std::move(var);
    if (out_dist) *out_dist = std::move(dist);
    if (out_args) *out_args = std::move(args);
    return true;
}

inline RecognizableSet recognizable_edges(const FactorGraph& g) {
    std::vector<RecognizableEdge> candidates;
    for (const auto& f : g.factors) {
        std::string var, dist;
        std::vector<ExprPtr> args;
        if (!recognizable_form(*f.statement, &var, &dist, &args)) continue;
        if (!g.variables.count(var)) continue;
        if (!g.edges.count({var, f.id})) continue;
        candidates.push_back({var, f.id, dist, std::move(args)});
    }

    // at most one recognizable edge per variable; ties drop all
    std::map<std::string, int> per_var;
    for (const auto& c : candidates) ++per_var[c.var];
    RecognizableSet r;
    for (auto& c : candidates)
        if (per_var[c.var] == 1) r.edges.push_back(std::move(c));
    return r;
}

// ---------------------------------------------------------------------------
// Propositional encoding. Atom names: "Sel:<var>:<factor>" for edges of g,
// "P:<v1>:<v2>" for ordered variable pairs (including self, for acyclicity).

namespace detail {

inline std::string sel_atom(const std::string& v, const std::string& f) {
    return "Sel:" + v + ":" + f;
}
inline std::string path_atom(const std::string& a, const std::string& b) {
    return "P:" + a + ":" + b;
}

}  // namespace detail

inline FormulaPtr encode(const FactorGraph& g, const RecognizableSet& r) {
    using F = Formula;
    std::vector<FormulaPtr> rules;
    std::vector<std::string> vars(g.variables.begin(), g.variables.end());

    // rule 1: acyclicity
    for (const auto& v : vars) rules.push_back(F::make_not(F::make_atom(detail::path_atom(v, v))));

    for (const auto& f : g.factors) {
        auto nbrs = g.neighbors(f.id);
        std::vector<std::string> nv(nbrs.begin(), nbrs.end());
        // rule 2: all factors are covered
        std::vector<FormulaPtr> any;
        for (const auto& v : nv) any.push_back(F::make_atom(detail::sel_atom(v, f.id)));
        rules.push_back(F::make_or(std::move(any)));
        // rule 3: factors are not covered more than once
        for (size_t i = 0; i < nv.size(); ++i)
            for (size_t j = 0; j < nv.size(); ++j)
                if (i != j)
                    rules.push_back(F::make_implies(
                        F::make_atom(detail::sel_atom(nv[i], f.id)),
                        F::make_not(F::make_atom(detail::sel_atom(nv[j], f.id)))));
        // rule 7: selecting an edge creates edges in the DAG
        for (const auto& v1 : nv)
            for (const auto& v2 : nv)
                if (v1 != v2)
                    rules.push_back(F::make_implies(
                        F::make_and({F::make_not(F::make_atom(detail::sel_atom(v1, f.id))),
                                     F::make_atom(detail::sel_atom(v2, f.id))}),
                        F::make_atom(detail::path_atom(v1, v2))));
    }

    // rule 4: all variables are covered
    for (const auto& v : vars) {
        std::vector<FormulaPtr> any;
        for (const auto& fid : g.factors_of(v))
            any.push_back(F::make_atom(detail::sel_atom(v, fid)));
        rules.push_back(F::make_or(std::move(any)));
    }

    // rule 5: edges in r are included
    for (const auto& e : r.edges) rules.push_back(F::make_atom(detail::sel_atom(e.var, e.factor_id)));

    // rule 6: variables covered by r are not covered again
    for (const auto& e : r.edges)
        for (const auto& fid : g.factors_of(e.var))
            if (fid != e.factor_id)
                rules.push_back(F::make_not(F::make_atom(detail::sel_atom(e.var, fid))));

    // rule 8: paths compose
    for (const auto& v1 : vars)
        for (const auto& v2 : vars)
            for (const auto& v3 : vars)
                rules.push_back(F::make_implies(
                    F::make_and({F::make_atom(detail::path_atom(v1, v2)),
                                 F::make_atom(detail::path_atom(v2, v3))}),
                    F::make_atom(detail::path_atom(v1, v3))));

    return F::make_and(std::move(rules));
}

// S = { α(A) | A ∈ SAT(...) }, identified by projection onto the Sel atoms.
inline std::set<EdgeSelectionSet> solve_selection_sets(const FactorGraph& g,
                                                       const RecognizableSet& r) {
    if (g.variables.empty()) return {EdgeSelectionSet{}};  // degenerate but legal

    std::set<std::string> projection;
    for (const auto& [v, fid] : g.edges) projection.insert(detail::sel_atom(v, fid));
    auto formula = encode(g, r);
    auto cnf = to_cnf(*formula, projection);
    std::set<EdgeSelectionSet> out;
    for (const auto& sol : enumerate_projected(cnf)) {
        EdgeSelectionSet s;
        for (const auto& atom : sol) {
            auto c1 = atom.find(':');
            auto c2 = atom.find(':', c1 + 1);
            s.edges.insert({atom.substr(c1 + 1, c2 - c1 - 1), atom.substr(c2 + 1)});
        }
        out.insert(std::move(s));
    }
    return out;
}

// C(G, s): contraction into a DAG with assignment A.
inline Dag contract(const FactorGraph& g, const EdgeSelectionSet& s) {
    Dag d;
    d.variables = g.variables;
    d.source = s;
    for (const auto& v : g.variables) d.assignment[v];
    for (const auto& [vb, fid] : s.edges) {
        d.assignment[vb].insert(fid);
        for (const auto& va : g.neighbors(fid))
            if (va != vb) d.edges.insert({va, vb});
    }
    d.topo_order({});  // throws on a cycle: the encoding should pre-filter
    return d;
}

// σ: direct check that s is a sound transformation, independent of the SAT
// path atoms — used as the oracle the encoding is validated against.
inline bool soundness_oracle(const FactorGraph& g, const EdgeSelectionSet& s) {
    // every pair must be an edge of g
    for (const auto& e : s.edges)
        if (!g.edges.count(e)) return false;
    // every factor covered exactly once
    std::map<std::string, int> cover;
    for (const auto& [v, fid] : s.edges) ++cover[fid];
    for (const auto& f : g.factors)
        if (cover[f.id] != 1) return false;
    if (s.edges.size() != g.factors.size()) return false;
    // every variable covered at least once
    for (const auto& v : g.variables)
        if (s.factors_of(v).empty()) return false;
    // acyclicity of the contraction, by direct cycle search
    std::set<std::pair<std::string, std::string>> edges;
    for (const auto& [vb, fid] : s.edges)
        for (const auto& va : g.neighbors(fid))
            if (va != vb) edges.insert({va, vb});
    std::map<std::string, int> state;  // 0 unvisited, 1 in progress, 2 done
    std::function<bool(const std::string&)> has_cycle = [&](const std::string& v) {
        state[v] = 1;
        for (const auto& [a, b] : edges)
            if (a == v) {
                if (state[b] == 1) return true;
                if (state[b] == 0 && has_cycle(b)) return true;
            }
        state[v] = 2;
        return false;
    };
    for (const auto& v : g.variables)
        if (state[v] == 0 && has_cycle(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Queries. V′ = variables not covered by r; variables that are roots in
// every DAG arising from S are skipped (their assigned density is constant-
// normalized up to proportionality either way).

inline std::set<std::string> roots_in_all_dags(const std::set<EdgeSelectionSet>& S,
                                               const FactorGraph& g) {
    std::set<std::string> out = g.variables;
    for (const auto& s : S) {
        auto roots = contract(g, s).roots();
        std::set<std::string> keep;
        for (const auto& v : out)
            if (roots.count(v)) keep.insert(v);
        out = std::move(keep);
    }
    return out;
}

inline std::string render_query(const FactorGraph& g, const std::string& var,
                                const std::set<std::string>& factor_ids) {
    std::string stmts;
    for (const auto& fid : factor_ids) {
        if (!stmts.empty()) stmts += "  ";
        const Factor* f = g.factor(fid);
        stmts += fid + ": " + (f ? f->pretty : "?");
    }
    return "Is the product of {" + stmts + "} a constant-normalized density over " + var + "?";
}

inline std::vector<Query> build_queries(const std::set<EdgeSelectionSet>& S,
                                        const RecognizableSet& r, const FactorGraph& g) {
    auto covered = r.covered_vars();
    auto skipped = roots_in_all_dags(S, g);
    std::set<Query> qs;
    for (const auto& s : S)
        for (const auto& v : g.variables) {
            if (covered.count(v) || skipped.count(v)) continue;
            Query q;
            q.var = v;
            q.factor_ids = s.factors_of(v);
            if (q.factor_ids.empty()) continue;
            q.rendering = render_query(g, v, q.factor_ids);
            qs.insert(std::move(q));
        }
    return {qs.begin(), qs.end()};
}

// S* = { s ∈ S | every queried variable's F(v,s) was affirmed }. Variables
// skipped as roots-in-all-DAGs are implicitly affirmed.
inline std::set<EdgeSelectionSet> filter_by_answers(
    const std::set<EdgeSelectionSet>& S, const std::vector<Query>& queries,
    const std::set<std::pair<std::string, std::set<std::string>>>& affirmed,
    const FactorGraph& g) {
    std::set<std::string> queried_vars;
    for (const auto& q : queries) queried_vars.insert(q.var);
    std::set<EdgeSelectionSet> out;
    for (const auto& s : S) {
        bool ok = true;
        for (const auto& v : queried_vars)
            if (!affirmed.count({v, s.factors_of(v)})) ok = false;
        if (ok) out.insert(s);
    }
    return out;
}

inline EdgeSelectionSet choose_canonical(const std::set<EdgeSelectionSet>& S_star) {
    if (S_star.empty())
        throw TransformError(
            "no DAG can be derived from the model with the given constant-normalized densities");
    return *S_star.begin();  // set ordering = lexicographic on sorted edges
}

// ---------------------------------------------------------------------------
// Density of variable v in the DAG: the product of its assigned factors.
inline double dag_variable_log_density(const Dag& d, const FactorGraph& g, const Program& prog,
                                       const std::string& var, const Environment& env0) {
    Environment env = env0;
    double total = 0.0;
    for (BlockKind k : {BlockKind::TransformedData, BlockKind::TransformedParameters}) {
        const auto* stmts = prog.block(k);
        if (!stmts) continue;
        double ignore = 0.0;
        Executor ex(env, nullptr, &ignore);
        for (const auto& s : *stmts) ex.exec(*s);
    }
    for (const auto& fid : d.assignment.at(var)) {
        const Factor* f = g.factor(fid);
        double term = 0.0;
        Executor ex(env, nullptr, &term);
        try {
            ex.exec(*detail::wrap_in_control(prog, f->statement));
        } catch (const RejectSignal&) {
            return kNegInf;
        }
        total += term;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Renderings for --emit dag / --emit selections.

inline std::string dag_to_dot(const Dag& d) {
    std::string out = "digraph dag {\n";
    for (const auto& v : d.variables) out += "  " + v + ";\n";
    for (const auto& [a, b] : d.edges) out += "  " + a + " -> " + b + ";\n";
    out += "}\n";
    return out;
}

inline std::string dag_assignment_table(const Dag& d) {
    std::string out;
    for (const auto& [v, fids] : d.assignment) {
        out += "assign " + v + " =";
        bool first = true;
        for (const auto& fid : fids) {
            out += first ? " " : ",";
            out += fid;
            first = false;
        }
        out += "\n";
    }
    return out;
}

inline std::string render_selection(const EdgeSelectionSet& s) {
    std::string out = "{";
    bool first = true;
    for (const auto& [v, fid] : s.edges) {
        if (!first) out += ", ";
        out += "(" + v + ", " + fid + ")";
        first = false;
    }
    return out + "}";
}

}  // namespace fwdppl
