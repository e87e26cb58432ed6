// Control-flow graph construction, reaching-definitions analysis, and the
// inter-statement dependency graph derived from it. Arrays are monolithic:
// an indexed write is a weak update (gen without kill), so every prior
// definition of the array still reaches later uses.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fwdppl/ast.hpp"

namespace fwdppl {

struct ControlFlowGraph {
    static constexpr int kEntry = -1;
    static constexpr int kExit = -2;

    std::set<int> nodes;  // statement ids plus kEntry/kExit
    std::set<std::pair<int, int>> edges;
    std::map<int, std::set<std::string>> defs;
    std::map<int, std::set<std::string>> uses;
    std::set<int> weak_defs;  // indexed writes: definitions that do not kill

    std::set<int> successors(int n) const {
        std::set<int> out;
        for (const auto& [a, b] : edges)
            if (a == n) out.insert(b);
        return out;
    }
    std::set<int> predecessors(int n) const {
        std::set<int> out;
        for (const auto& [a, b] : edges)
            if (b == n) out.insert(a);
        return out;
    }
};

// A definition site: variable defined at a statement.
using Definition = std::pair<std::string, int>;

struct ReachingDefinitions {
    std::map<int, std::set<Definition>> entry;  // per CFG node
    std::map<int, std::set<Definition>> exit;
};

struct DependencyGraph {
    std::set<int> nodes;
    std::set<std::pair<int, int>> edges;  // (s1, s2): s1 influences s2

    bool has_edge(int a, int b) const { return edges.count({a, b}) > 0; }

    std::set<int> predecessors(int n) const {
        std::set<int> out;
        for (const auto& [a, b] : edges)
            if (b == n) out.insert(a);
        return out;
    }
};

namespace detail {

inline std::set<std::string> expr_idents(const Expr& e) {
    std::set<std::string> out;
    expr_vars(e, {}, out);
    return out;
}

inline void stmt_def_use(const Stmt& s, ControlFlowGraph& cfg) {
    auto& defs = cfg.defs[s.id];
    auto& uses = cfg.uses[s.id];
    auto add_uses = [&](const ExprPtr& e) {
        if (!e) return;
        for (const auto& v : expr_idents(*e)) uses.insert(v);
    };
    switch (s.kind) {
    case Stmt::Kind::Decl:
        defs.insert(s.decl_name);
        break;
    case Stmt::Kind::Assign:
        defs.insert(s.lhs);
        if (s.lhs_index) {
            cfg.weak_defs.insert(s.id);
            add_uses(s.lhs_index);
        }
        add_uses(s.rhs);
        break;
    case Stmt::Kind::TargetIncr:
        add_uses(s.rhs);
        break;
    case Stmt::Kind::Tilde:
        uses.insert(s.lhs);
        for (const auto& a : s.args) add_uses(a);
        break;
    case Stmt::Kind::For:
        defs.insert(s.loop_var);
        add_uses(s.lo);
        add_uses(s.hi);
        break;
    case Stmt::Kind::IfElse:
        add_uses(s.cond);
        break;
    case Stmt::Kind::Reject:
        break;
    }
}

// Wires a statement sequence; returns the set of nodes that fall through to
// whatever follows the sequence.
inline std::set<int> wire_stmts(const std::vector<StmtPtr>& stmts, std::set<int> preds,
                                ControlFlowGraph& cfg);

inline std::set<int> wire_stmt(const Stmt& s, std::set<int> preds, ControlFlowGraph& cfg) {
    cfg.nodes.insert(s.id);
    stmt_def_use(s, cfg);
    for (int p : preds) cfg.edges.insert({p, s.id});
    switch (s.kind) {
    case Stmt::Kind::For: {
        auto body_exit = wire_stmts(s.body, {s.id}, cfg);
        for (int p : body_exit) cfg.edges.insert({p, s.id});  // back edge
        return {s.id};
    }
    case Stmt::Kind::IfElse: {
        auto then_exit = wire_stmts(s.body, {s.id}, cfg);
        std::set<int> join = then_exit;
        if (s.else_body.empty()) {
            join.insert(s.id);  // fall through when the condition is false
        } else {
            auto else_exit = wire_stmts(s.else_body, {s.id}, cfg);
            join.insert(else_exit.begin(), else_exit.end());
        }
        return join;
    }
    default:
        return {s.id};
    }
}

inline std::set<int> wire_stmts(const std::vector<StmtPtr>& stmts, std::set<int> preds,
                                ControlFlowGraph& cfg) {
    for (const auto& s : stmts) preds = wire_stmt(*s, std::move(preds), cfg);
    return preds;
}

}  // namespace detail

inline ControlFlowGraph build_cfg(const Program& prog) {
    ControlFlowGraph cfg;
    cfg.nodes.insert(ControlFlowGraph::kEntry);
    cfg.nodes.insert(ControlFlowGraph::kExit);
    std::set<int> preds = {ControlFlowGraph::kEntry};
    for (const auto& [kind, stmts] : prog.blocks) preds = detail::wire_stmts(stmts, preds, cfg);
    for (int p : preds) cfg.edges.insert({p, ControlFlowGraph::kExit});
    return cfg;
}

inline ReachingDefinitions reaching_definitions(const ControlFlowGraph& cfg) {
    // all definition sites per variable, for kill sets
    std::map<std::string, std::set<int>> sites;
    for (const auto& [id, vars] : cfg.defs)
        for (const auto& v : vars) sites[v].insert(id);

    ReachingDefinitions rd;
    for (int n : cfg.nodes) {
        rd.entry[n];
        rd.exit[n];
    }

    // worklist to the least fixed point; iteration order does not affect it
    std::vector<int> worklist(cfg.nodes.begin(), cfg.nodes.end());
    while (!worklist.empty()) {
        int n = worklist.back();
        worklist.pop_back();

        std::set<Definition> in;
        for (int p : cfg.predecessors(n)) {
            const auto& pe = rd.exit[p];
            in.insert(pe.begin(), pe.end());
        }

        std::set<Definition> out = in;
        auto it = cfg.defs.find(n);
        if (it != cfg.defs.end()) {
            bool weak = cfg.weak_defs.count(n) > 0;
            for (const auto& v : it->second) {
                if (!weak)
                    for (int site : sites[v]) out.erase({v, site});
                out.insert({v, n});
            }
        }

        bool changed = out != rd.exit[n] || in != rd.entry[n];
        rd.entry[n] = std::move(in);
        rd.exit[n] = std::move(out);
        if (changed)
            for (int s : cfg.successors(n)) worklist.push_back(s);
    }
    return rd;
}

inline DependencyGraph dependency_graph(const Program& prog, const ControlFlowGraph& cfg) {
    ReachingDefinitions rd = reaching_definitions(cfg);

    DependencyGraph dep;
    for (int n : cfg.nodes)
        if (n >= 0) dep.nodes.insert(n);

    // data dependence: a definition reaching a use
    for (int n : dep.nodes) {
        auto uses_it = cfg.uses.find(n);
        if (uses_it == cfg.uses.end()) continue;
        for (const auto& [var, site] : rd.entry.at(n))
            if (site != n && uses_it->second.count(var)) dep.edges.insert({site, n});
    }

    // structural control dependence on enclosing for/if statements
    for (const auto& s : prog.all_statements())
        for (int ctrl : s->enclosing_control) dep.edges.insert({ctrl, s->id});

    // transitive closure
    bool changed = true;
    while (changed) {
        changed = false;
        auto snapshot = dep.edges;
        for (const auto& [a, b] : snapshot)
            for (const auto& [c, d] : snapshot)
                if (b == c && a != d && !dep.edges.count({a, d})) {
                    dep.edges.insert({a, d});
                    changed = true;
                }
    }
    return dep;
}

// V_D: free variables the statement depends on, directly or through the
// dependency graph, restricted to data/parameter roots.
inline std::set<std::string> dependent_vars(const Stmt& stmt, const DependencyGraph& dep,
                                            const Program& prog) {
    std::set<std::string> all = free_vars(stmt);
    for (int pred : dep.predecessors(stmt.id)) {
        auto fv = free_vars(*prog.stmt_by_id(pred));
        all.insert(fv.begin(), fv.end());
    }
    std::set<std::string> roots;
    for (const auto& v : all) {
        auto it = prog.symbols.find(v);
        if (it != prog.symbols.end() &&
            (it->second.block == BlockKind::Data || it->second.block == BlockKind::Parameters))
            roots.insert(v);
    }
    return roots;
}

// Statement ids of a backward slice: everything with a dependency path into
// the requested statements, minus density statements and declarations.
inline std::set<int> backward_slice_ids(const std::set<int>& stmt_ids, const DependencyGraph& dep,
                                        const Program& prog) {
    std::set<int> out;
    for (int id : stmt_ids)
        for (int pred : dep.predecessors(id)) out.insert(pred);
    // dependency graphs are transitively closed, so one step suffices
    std::set<int> filtered;
    for (int id : out) {
        auto s = prog.stmt_by_id(id);
        if (s->is_density() || s->kind == Stmt::Kind::Decl) continue;
        if (stmt_ids.count(id)) continue;
        filtered.insert(id);
    }
    return filtered;
}

namespace detail {

inline std::vector<StmtPtr> rebuild_slice(const std::vector<StmtPtr>& stmts,
                                          const std::set<int>& keep) {
    std::vector<StmtPtr> out;
    for (const auto& s : stmts) {
        if (s->kind == Stmt::Kind::For || s->kind == Stmt::Kind::IfElse) {
            auto body = rebuild_slice(s->body, keep);
            auto else_body = rebuild_slice(s->else_body, keep);
            if (body.empty() && else_body.empty() && !keep.count(s->id)) continue;
            auto copy = std::make_shared<Stmt>(*s);
            copy->body = std::move(body);
            copy->else_body = std::move(else_body);
            out.push_back(std::move(copy));
        } else if (keep.count(s->id)) {
            out.push_back(s);
        }
    }
    return out;
}

}  // namespace detail

// The slice as executable statements in source order, with each included
// statement wrapped in its enclosing control structure.
inline std::vector<StmtPtr> backward_slice(const std::set<int>& stmt_ids,
                                           const DependencyGraph& dep, const Program& prog) {
    std::set<int> keep = backward_slice_ids(stmt_ids, dep, prog);
    std::vector<StmtPtr> out;
    for (const auto& [kind, stmts] : prog.blocks) {
        auto part = detail::rebuild_slice(stmts, keep);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

// DOT rendering of the dependency graph for --emit dep-graph.
inline std::string dependency_graph_dot(const DependencyGraph& dep, const Program& prog) {
    std::string out = "digraph dependencies {\n";
    for (int n : dep.nodes) {
        std::string label = pretty(*prog.stmt_by_id(n));
        auto cut = label.find('\n');
        if (cut != std::string::npos) label = label.substr(0, cut) + " ...";
        std::string escaped;
        for (char c : label) {
            if (c == '"' || c == '\\') escaped += '\\';
            escaped += c;
        }
        out += "  s" + std::to_string(n) + " [label=\"s" + std::to_string(n) + ": " + escaped +
               "\"];\n";
    }
    for (const auto& [a, b] : dep.edges)
        out += "  s" + std::to_string(a) + " -> s" + std::to_string(b) + ";\n";
    out += "}\n";
    return out;
}

}  // namespace fwdppl
