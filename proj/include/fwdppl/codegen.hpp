// Conversion of a constant-normalized DAG into labeled code segments and
// executable mini-PPL programs. Each variable becomes either an RNG segment
// (its single assigned factor has a recognizable distribution form, rewritten
// to the _rng builtin) or a PDF segment (its dependency slice plus the raw
// density statements, to be sampled by Metropolis). Programs place RNG
// segments around each PDF segment's model block, chaining one program per
// PDF segment; prior-predictive and SBC bundles are assembled on top.
#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fwdppl/transform.hpp"

namespace fwdppl {

struct CodegenError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodeSegment {
    enum class Label { RNG, PDF };

    Label label = Label::RNG;
    std::vector<std::string> target_vars;  // variables drawn by this segment
    std::vector<StmtPtr> statements;       // Slice(A) ++ Stat(A) (or the _rng rewrite)
    std::set<std::string> required_inputs;
};

struct SamplingPlan {
    enum class Provenance { Prior, Predictive, PriorPredictive, Sbc };

    std::vector<CodeSegment> segments;
    Provenance provenance = Provenance::Prior;
    std::vector<std::string> topo_order;

    std::vector<std::string> drawn_vars() const {
        std::vector<std::string> out;
        for (const auto& s : segments)
            for (const auto& v : s.target_vars) out.push_back(v);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Deep cloning and variable renaming for statement reuse across programs.

namespace detail {

inline ExprPtr rename_expr(const ExprPtr& e, const std::map<std::string, std::string>& ren) {
    if (!e) return nullptr;
    auto copy = std::make_shared<Expr>(*e);
    if (copy->kind == Expr::Kind::Var) {
        auto it = ren.find(copy->name);
        if (it != ren.end()) copy->name = it->second;
    }
    for (auto& a : copy->args) a = rename_expr(a, ren);
    return copy;
}

inline StmtPtr rename_stmt(const StmtPtr& s, const std::map<std::string, std::string>& ren) {
    auto copy = std::make_shared<Stmt>(*s);
    auto map_name = [&](std::string& n) {
        auto it = ren.find(n);
        if (it != ren.end()) n = it->second;
    };
    map_name(copy->lhs);
    map_name(copy->decl_name);
    copy->lhs_index = rename_expr(copy->lhs_index, ren);
    copy->rhs = rename_expr(copy->rhs, ren);
    for (auto& a : copy->args) a = rename_expr(a, ren);
    copy->lo = rename_expr(copy->lo, ren);
    copy->hi = rename_expr(copy->hi, ren);
    copy->cond = rename_expr(copy->cond, ren);
    copy->type.dim = rename_expr(copy->type.dim, ren);
    copy->type.lower = rename_expr(copy->type.lower, ren);
    copy->type.upper = rename_expr(copy->type.upper, ren);
    for (auto& c : copy->body) c = rename_stmt(c, ren);
    for (auto& c : copy->else_body) c = rename_stmt(c, ren);
    return copy;
}

// Variables a statement reads (excluding what it writes), for input
// tracking across a segment's statement list.
inline void used_names(const Stmt& s, std::set<std::string> bound, std::set<std::string>& out) {
    switch (s.kind) {
    case Stmt::Kind::Decl:
        break;
    case Stmt::Kind::Assign:
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
        for (const auto& c : s.body) used_names(*c, bound, out);
        break;
    case Stmt::Kind::IfElse:
        expr_vars(*s.cond, bound, out);
        for (const auto& c : s.body) used_names(*c, bound, out);
        for (const auto& c : s.else_body) used_names(*c, bound, out);
        break;
    case Stmt::Kind::Reject:
        break;
    }
}

inline void defined_names(const Stmt& s, std::set<std::string>& out) {
    if (s.kind == Stmt::Kind::Assign) out.insert(s.lhs);
    if (s.kind == Stmt::Kind::Decl) out.insert(s.decl_name);
    for (const auto& c : s.body) defined_names(*c, out);
    for (const auto& c : s.else_body) defined_names(*c, out);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// sample(A): the case split on the assigned factor set.

inline CodeSegment sample_segment(const std::string& v, const std::set<std::string>& A_v,
                                  const Dag& dag, const FactorGraph& g, const Program& prog,
                                  const DependencyGraph& dep) {
    if (A_v.empty()) throw CodegenError("variable " + v + " has no assigned factors");
    (void)dag;

    std::set<int> factor_stmt_ids;
    std::vector<StmtPtr> factor_stmts;
    for (const auto& fid : A_v) {
        const Factor* f = g.factor(fid);
        if (!f) throw CodegenError("unknown factor " + fid);
        factor_stmt_ids.insert(f->statement->id);
        factor_stmts.push_back(f->statement);
    }
    std::sort(factor_stmts.begin(), factor_stmts.end(),
              [](const StmtPtr& a, const StmtPtr& b) { return a->id < b->id; });

    CodeSegment seg;
    seg.target_vars = {v};
    seg.statements = backward_slice(factor_stmt_ids, dep, prog);

    std::string fvar, fdist;
    std::vector<ExprPtr> fargs;
    if (A_v.size() == 1 && recognizable_form(*factor_stmts[0], &fvar, &fdist, &fargs) &&
        fvar == v) {
        seg.label = CodeSegment::Label::RNG;
        auto draw = std::make_shared<Stmt>();
        draw->kind = Stmt::Kind::Assign;
        draw->id = -1;
        draw->lhs = v;
        draw->rhs = Expr::call(fdist + "_rng", fargs);
        seg.statements.push_back(std::move(draw));
    } else {
        seg.label = CodeSegment::Label::PDF;
        for (const auto& f : factor_stmts)
            seg.statements.push_back(detail::wrap_in_control(prog, f));
    }

    // inputs: everything read before the segment defines it, minus the
    // target variable itself
    std::set<std::string> defined = {v};
    for (const auto& s : seg.statements) {
        std::set<std::string> uses;
        detail::used_names(*s, {}, uses);
        for (const auto& u : uses)
            if (!defined.count(u)) seg.required_inputs.insert(u);
        detail::defined_names(*s, defined);
    }
    return seg;
}

// sampleG: one segment per variable in deterministic topological order, ties
// broken by source declaration order.
inline SamplingPlan sample_graph(const Dag& dag, const FactorGraph& g, const Program& prog,
                                 SamplingPlan::Provenance provenance) {
    std::vector<std::pair<int, std::string>> decl_order;
    for (const auto& [name, info] : prog.symbols) decl_order.push_back({info.decl_stmt_id, name});
    std::sort(decl_order.begin(), decl_order.end());
    std::vector<std::string> preference;
    for (const auto& [id, name] : decl_order) preference.push_back(name);

    auto cfg = build_cfg(prog);
    auto dep = dependency_graph(prog, cfg);

    SamplingPlan plan;
    plan.provenance = provenance;
    plan.topo_order = dag.topo_order(preference);
    for (const auto& v : plan.topo_order)
        plan.segments.push_back(sample_segment(v, dag.assignment.at(v), dag, g, prog, dep));
    return plan;
}

// ---------------------------------------------------------------------------
// Program synthesis.

struct SynthesizedProgram {
    std::string name;                 // file stem, e.g. "ppc_1"
    std::string text;                 // valid mini-PPL source
    Program program;                  // parsed form of `text`
    std::vector<std::string> draws;   // variables this program draws, in order
    std::set<std::string> data_inputs;
};

namespace detail {

// Declaration line for `name`, cloned from the declaration of `base` (which
// carries the shape/constraints), renamed as needed.
inline std::string decl_line(const Program& prog, const std::string& name,
                             const std::string& base) {
    auto it = prog.symbols.find(base);
    if (it == prog.symbols.end())
        throw CodegenError("no declaration available for variable " + base);
    auto decl = prog.stmt_by_id(it->second.decl_stmt_id);
    std::map<std::string, std::string> ren;
    if (name != base) ren[base] = name;
    auto copy = rename_stmt(decl, ren);
    copy->decl_name = name;
    return pretty(*copy);
}

// Base symbol a (possibly suffixed) variable name derives from.
inline std::string base_symbol(const Program& prog, const std::string& name) {
    if (prog.symbols.count(name)) return name;
    for (const char* suf : {"_sim", "_prior"}) {
        std::string s = suf;
        if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
            std::string base = name.substr(0, name.size() - s.size());
            if (prog.symbols.count(base)) return base;
        }
    }
    throw CodegenError("no declaration available for variable " + name);
}

struct ProgramBuilder {
    const Program& prog;
    std::set<std::string> declared;
    std::map<std::string, std::vector<std::string>> blocks;  // block name -> lines

    explicit ProgramBuilder(const Program& p) : prog(p) {}

    void declare(const std::string& block, const std::string& name) {
        if (declared.count(name)) return;
        declared.insert(name);
        blocks[block].push_back(decl_line(prog, name, base_symbol(prog, name)));
    }

    void add_segment(const std::string& block, const CodeSegment& seg) {
        // declarations for the drawn variables and slice intermediates
        for (const auto& v : seg.target_vars) declare(block, v);
        std::set<std::string> defs;
        for (const auto& s : seg.statements) defined_names(*s, defs);
        for (const auto& v : defs)
            if (!declared.count(v)) declare(block, v);
        for (const auto& s : seg.statements) blocks[block].push_back(pretty(*s));
    }

    std::string render() const {
        static const char* order[] = {"data",       "transformed data",    "parameters",
                                      "transformed parameters", "model",
                                      "generated quantities"};
        std::ostringstream out;
        for (const char* b : order) {
            auto it = blocks.find(b);
            if (it == blocks.end() || it->second.empty()) continue;
            out << b << " {\n";
            for (const auto& line : it->second) {
                std::istringstream ls(line);
                std::string sub;
                while (std::getline(ls, sub)) out << "  " << sub << "\n";
            }
            out << "}\n";
        }
        return out.str();
    }
};

}  // namespace detail

inline std::vector<SynthesizedProgram> synthesize_programs(const SamplingPlan& plan,
                                                           const Program& prog,
                                                           const std::string& name_stem = "program") {
    // group segments: leading RNGs, then one group per PDF segment with its
    // trailing RNGs
    struct Group {
        const CodeSegment* pdf = nullptr;
        std::vector<const CodeSegment*> leading;   // RNGs before the PDF (first program only)
        std::vector<const CodeSegment*> trailing;  // RNGs after the PDF
    };
    std::vector<Group> groups;
    Group current;
    bool seen_pdf = false;
    for (const auto& seg : plan.segments) {
        if (seg.label == CodeSegment::Label::PDF) {
            if (seen_pdf) {
                groups.push_back(std::move(current));
                current = Group();
            }
            current.pdf = &seg;
            seen_pdf = true;
        } else if (!seen_pdf) {
            current.leading.push_back(&seg);
        } else {
            current.trailing.push_back(&seg);
        }
    }
    groups.push_back(std::move(current));

    std::vector<SynthesizedProgram> out;
    std::set<std::string> drawn_earlier;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const Group& grp = groups[gi];
        detail::ProgramBuilder b(prog);
        SynthesizedProgram sp;
        sp.name = groups.size() == 1 ? name_stem : name_stem + "_" + std::to_string(gi + 1);

        // mark chained inputs as declared so segment emission skips them
        std::set<std::string> needed;
        auto note_inputs = [&](const CodeSegment& seg) {
            for (const auto& v : seg.required_inputs)
                if (!b.declared.count(v)) needed.insert(v);
        };

        for (const CodeSegment* seg : grp.leading) note_inputs(*seg);
        if (grp.pdf) note_inputs(*grp.pdf);
        for (const CodeSegment* seg : grp.trailing) note_inputs(*seg);

        for (const CodeSegment* seg : grp.leading) {
            b.add_segment("transformed data", *seg);
            for (const auto& v : seg->target_vars) sp.draws.push_back(v);
        }
        if (grp.pdf) {
            for (const auto& v : grp.pdf->target_vars) {
                b.declare("parameters", v);
                sp.draws.push_back(v);
            }
            std::set<std::string> defs;
            for (const auto& s : grp.pdf->statements) detail::defined_names(*s, defs);
            for (const auto& v : defs)
                if (!b.declared.count(v)) b.declare("model", v);
            for (const auto& s : grp.pdf->statements) b.blocks["model"].push_back(pretty(*s));
        }
        for (const CodeSegment* seg : grp.trailing) {
            b.add_segment("generated quantities", *seg);
            for (const auto& v : seg->target_vars) sp.draws.push_back(v);
        }
        // pure-RNG plan: everything belongs in generated quantities
        if (!grp.pdf && gi == 0 && groups.size() == 1) {
            b.blocks["generated quantities"] = std::move(b.blocks["transformed data"]);
            b.blocks.erase("transformed data");
        }

        // data block: required inputs not produced here, closed over the
        // variables their declarations' dimensions mention
        std::set<std::string> data_vars;
        std::vector<std::string> frontier(needed.begin(), needed.end());
        while (!frontier.empty()) {
            std::string v = frontier.back();
            frontier.pop_back();
            if (b.declared.count(v) || data_vars.count(v)) continue;
            data_vars.insert(v);
            auto base = detail::base_symbol(prog, v);
            auto decl = prog.stmt_by_id(prog.symbols.at(base).decl_stmt_id);
            if (decl->type.dim) {
                std::set<std::string> dim_vars;
                detail::expr_vars(*decl->type.dim, {}, dim_vars);
                for (const auto& d : dim_vars) frontier.push_back(d);
            }
        }
        // declaration order: dimension variables first (by original position)
        std::vector<std::pair<int, std::string>> ordered;
        for (const auto& v : data_vars)
            ordered.push_back({prog.symbols.at(detail::base_symbol(prog, v)).decl_stmt_id, v});
        std::sort(ordered.begin(), ordered.end());
        for (const auto& [pos, v] : ordered) {
            b.declared.insert(v);
            b.blocks["data"].push_back(detail::decl_line(prog, v, detail::base_symbol(prog, v)));
            sp.data_inputs.insert(v);
        }

        sp.text = b.render();
        try {
            sp.program = parse(sp.text);
        } catch (const ParseError& e) {
            throw CodegenError("synthesized program failed to parse: " + std::string(e.what()) +
                               "\n" + sp.text);
        }
        for (const auto& v : sp.draws) drawn_earlier.insert(v);
        out.push_back(std::move(sp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prior-predictive pipeline: Sam_prior ++ Sam_predictive with simulated data
// renamed `<var>_sim`.

inline SamplingPlan rename_plan_vars(const SamplingPlan& plan,
                                     const std::map<std::string, std::string>& ren) {
    SamplingPlan out = plan;
    for (auto& seg : out.segments) {
        for (auto& v : seg.target_vars) {
            auto it = ren.find(v);
            if (it != ren.end()) v = it->second;
        }
        for (auto& s : seg.statements) s = detail::rename_stmt(s, ren);
        std::set<std::string> req;
        for (const auto& v : seg.required_inputs) {
            auto it = ren.find(v);
            req.insert(it == ren.end() ? v : it->second);
        }
        seg.required_inputs = std::move(req);
    }
    for (auto& v : out.topo_order) {
        auto it = ren.find(v);
        if (it != ren.end()) v = it->second;
    }
    return out;
}

// Derives the canonical DAG of a restricted graph without user interaction.
// Queries with a single candidate factor set are affirmed automatically
// (rejecting them would leave no DAG at all); genuinely ambiguous queries —
// a variable with several candidate sets — require the interactive protocol.
inline Dag derive_dag_unattended(const FactorGraph& g) {
    auto r = recognizable_edges(g);
    auto S = solve_selection_sets(g, r);
    auto queries = build_queries(S, r, g);
    std::map<std::string, int> options_per_var;
    for (const auto& q : queries) ++options_per_var[q.var];
    for (const auto& [v, n] : options_per_var)
        if (n > 1)
            throw TransformError(
                "user queries required to disambiguate constant-normalized densities");
    std::set<std::pair<std::string, std::set<std::string>>> affirmed;
    for (const auto& q : queries) affirmed.insert({q.var, q.factor_ids});
    return contract(g, choose_canonical(filter_by_answers(S, queries, affirmed, g)));
}

inline SamplingPlan build_ppc_plan(const Program& prog, const FactorGraph& g,
                                   const Dag& prior_dag, const FactorGraph& pred_graph,
                                   const Dag& pred_dag) {
    (void)g;
    auto prior_plan = sample_graph(prior_dag, g, prog, SamplingPlan::Provenance::Prior);
    auto pred_plan =
        sample_graph(pred_dag, pred_graph, prog, SamplingPlan::Provenance::Predictive);
    std::map<std::string, std::string> ren;
    for (const auto& v : pred_dag.variables) ren[v] = v + "_sim";
    pred_plan = rename_plan_vars(pred_plan, ren);

    SamplingPlan plan;
    plan.provenance = SamplingPlan::Provenance::PriorPredictive;
    plan.segments = prior_plan.segments;
    plan.segments.insert(plan.segments.end(), pred_plan.segments.begin(),
                         pred_plan.segments.end());
    plan.topo_order = prior_plan.topo_order;
    plan.topo_order.insert(plan.topo_order.end(), pred_plan.topo_order.begin(),
                           pred_plan.topo_order.end());
    return plan;
}

inline std::vector<SynthesizedProgram> synthesize_ppc(const Program& prog,
                                                      const FactorGraph& g,
                                                      const Dag& prior_dag,
                                                      const FactorGraph& pred_graph,
                                                      const Dag& pred_dag) {
    auto plan = build_ppc_plan(prog, g, prior_dag, pred_graph, pred_dag);
    return synthesize_programs(plan, prog, "ppc");
}

inline std::vector<SynthesizedProgram> synthesize_ppc(const Program& prog) {
    auto g = build_factor_graph(prog);
    auto prior = restrict_for_prior(g, prog.data_vars());
    auto pred = restrict_for_predictive(g, prog.parameter_vars());
    return synthesize_ppc(prog, prior, derive_dag_unattended(prior), pred,
                          derive_dag_unattended(pred));
}

// ---------------------------------------------------------------------------
// SBC bundle: the prior-predictive chain plus one posterior/rank program and
// a manifest describing execution order and data handoff.

struct SbcBundle {
    std::vector<SynthesizedProgram> programs;  // ppc chain, then the posterior program
    std::string manifest;
    bool combined_possible = false;  // no PDF segments: prior chain is a single program
    int ranks_per_draw = 0;
};

inline SbcBundle synthesize_sbc(const Program& prog, const FactorGraph& g, const Dag& prior_dag,
                                const FactorGraph& pred_graph, const Dag& pred_dag,
                                int ranks_per_draw) {
    auto plan = build_ppc_plan(prog, g, prior_dag, pred_graph, pred_dag);
    SbcBundle bundle;
    bundle.ranks_per_draw = ranks_per_draw;
    bundle.combined_possible = true;
    for (const auto& seg : plan.segments)
        if (seg.label == CodeSegment::Label::PDF) bundle.combined_possible = false;
    bundle.programs = synthesize_programs(plan, prog, "ppc");

    // posterior program: the original model conditioned on the simulated
    // data, with rank indicators for every parameter in generated quantities
    std::map<std::string, std::string> sim_ren;
    for (const auto& v : pred_dag.variables) sim_ren[v] = v + "_sim";

    detail::ProgramBuilder b(prog);
    std::vector<std::pair<int, std::string>> data_order;
    for (const auto& v : prog.data_vars())
        data_order.push_back({prog.symbols.at(v).decl_stmt_id, v});
    std::sort(data_order.begin(), data_order.end());
    for (const auto& [pos, v] : data_order) {
        std::string name = sim_ren.count(v) ? sim_ren.at(v) : v;
        b.declared.insert(name);
        b.blocks["data"].push_back(detail::decl_line(prog, name, v));
    }
    std::vector<std::pair<int, std::string>> param_order;
    for (const auto& v : prog.parameter_vars())
        param_order.push_back({prog.symbols.at(v).decl_stmt_id, v});
    std::sort(param_order.begin(), param_order.end());
    for (const auto& [pos, v] : param_order) {
        b.declared.insert(v + "_prior");
        b.blocks["data"].push_back(detail::decl_line(prog, v + "_prior", v));
        b.declared.insert(v);
        b.blocks["parameters"].push_back(detail::decl_line(prog, v, v));
    }
    auto copy_block = [&](BlockKind k, const std::string& name) {
        const auto* stmts = prog.block(k);
        if (!stmts) return;
        for (const auto& s : *stmts)
            b.blocks[name].push_back(pretty(*detail::rename_stmt(s, sim_ren)));
    };
    copy_block(BlockKind::TransformedData, "transformed data");
    copy_block(BlockKind::TransformedParameters, "transformed parameters");
    copy_block(BlockKind::Model, "model");
    for (const auto& [pos, v] : param_order) {
        std::string ind = "lt_" + v;
        b.blocks["generated quantities"].push_back(detail::decl_line(prog, ind, v));
        b.blocks["generated quantities"].push_back(ind + " = " + v + " < " + v + "_prior;");
    }

    SynthesizedProgram posterior;
    posterior.name = "posterior";
    posterior.text = b.render();
    try {
        posterior.program = parse(posterior.text);
    } catch (const ParseError& e) {
        throw CodegenError("posterior program failed to parse: " + std::string(e.what()) + "\n" +
                           posterior.text);
    }
    for (const auto& [pos, v] : param_order) posterior.draws.push_back("lt_" + v);
    for (const auto& [name, info] : posterior.program.symbols)
        if (info.block == BlockKind::Data) posterior.data_inputs.insert(name);
    bundle.programs.push_back(std::move(posterior));

    // manifest
    std::ostringstream m;
    for (size_t i = 0; i < bundle.programs.size(); ++i)
        m << "program " << (i + 1) << " " << bundle.programs[i].name << ".ppl\n";
    size_t post_idx = bundle.programs.size();
    auto producer_of = [&](const std::string& var) -> size_t {
        std::string base = var;
        for (const char* suf : {"_prior"}) {
            std::string s = suf;
            if (base.size() > s.size() &&
                base.compare(base.size() - s.size(), s.size(), s) == 0)
                base = base.substr(0, base.size() - s.size());
        }
        for (size_t i = 0; i + 1 < bundle.programs.size(); ++i)
            for (const auto& d : bundle.programs[i].draws)
                if (d == base) return i + 1;
        return 0;
    };
    // chain handoffs within the prior-predictive programs
    for (size_t j = 1; j + 1 < bundle.programs.size(); ++j)
        for (const auto& v : bundle.programs[j].data_inputs) {
            size_t p = producer_of(v);
            if (p != 0 && p <= j)
                m << "handoff " << v << " from " << p << " to " << (j + 1) << "\n";
        }
    // handoffs into the posterior program
    for (const auto& v : bundle.programs.back().data_inputs) {
        size_t p = producer_of(v);
        if (p != 0) m << "handoff " << v << " from " << p << " to " << post_idx << "\n";
    }
    for (const auto& [pos, v] : param_order)
        m << "ranks var=" << v << " draws=" << ranks_per_draw << "\n";
    bundle.manifest = m.str();
    return bundle;
}

inline SbcBundle synthesize_sbc(const Program& prog, int ranks_per_draw) {
    auto g = build_factor_graph(prog);
    auto prior = restrict_for_prior(g, prog.data_vars());
    auto pred = restrict_for_predictive(g, prog.parameter_vars());
    return synthesize_sbc(prog, prior, derive_dag_unattended(prior), pred,
                          derive_dag_unattended(pred), ranks_per_draw);
}

}  // namespace fwdppl
