// End-to-end acceptance gate: one pass/fail line per criterion, nonzero exit
// if any criterion fails. Runs against the shared fixture models.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "fwdppl/cli.hpp"

#include "fixtures.hpp"

using namespace fwdppl;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

struct Criterion {
    int number;
    std::string title;
    bool ok = true;
    std::vector<std::string> notes;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            notes.push_back(what);
        }
    }
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    void finish(double time_limit = 0.0) {
        double t = seconds();
        if (time_limit > 0 && t > time_limit)
            expect(false, "runtime " + std::to_string(t) + "s exceeds " +
                              std::to_string(time_limit) + "s");
        std::ostringstream line;
        line << (ok ? "PASS" : "FAIL") << " " << number << ": " << title;
        line.setf(std::ios::fixed);
        line.precision(2);
        line << " (" << t << "s)";
        std::cout << line.str() << "\n";
        for (const auto& n : notes) std::cout << "    - " << n << "\n";
        if (!ok) ++g_failures;
    }
};

std::string stmts_text(const CodeSegment& seg) {
    std::string out;
    for (const auto& s : seg.statements) {
        if (!out.empty()) out += "\n";
        out += pretty(*s);
    }
    return out;
}

FactorGraph prior_graph(const char* src, Program* out_prog = nullptr) {
    Program prog = parse(src);
    auto g = build_factor_graph(prog);
    auto restricted = restrict_for_prior(g, prog.data_vars());
    if (out_prog) *out_prog = std::move(prog);
    return restricted;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("fwdppl_acceptance_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream f(path / name, std::ios::binary);
        f << content;
        return (path / name).string();
    }
};

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli(const std::vector<std::string>& args, const std::string& stdin_text = "") {
    std::istringstream in(stdin_text);
    std::ostringstream out, err;
    CliResult r;
    r.code = run_cli(args, in, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

FactorGraph synthetic_graph(int n_vars, const std::vector<std::set<int>>& factor_nbrs) {
    FactorGraph g;
    for (int i = 0; i < n_vars; ++i) {
        g.variables.insert("v" + std::to_string(i));
        g.is_data["v" + std::to_string(i)] = false;
    }
    for (size_t j = 0; j < factor_nbrs.size(); ++j) {
        Factor f;
        f.id = "G" + std::to_string(j);
        g.factors.push_back(f);
        for (int i : factor_nbrs[j]) g.edges.insert({"v" + std::to_string(i), f.id});
    }
    return g;
}

std::set<EdgeSelectionSet> brute_force_S(const FactorGraph& g, const RecognizableSet& r) {
    std::vector<std::vector<std::string>> choices;
    for (const auto& f : g.factors) {
        auto nbrs = g.neighbors(f.id);
        choices.emplace_back(nbrs.begin(), nbrs.end());
        if (choices.back().empty()) return {};
    }
    std::set<EdgeSelectionSet> out;
    std::vector<size_t> idx(choices.size(), 0);
    while (true) {
        EdgeSelectionSet s;
        size_t k = 0;
        for (const auto& f : g.factors) s.edges.insert({choices[k][idx[k]], f.id}), ++k;
        bool consistent = true;
        for (const auto& e : r.edges) {
            if (!s.edges.count({e.var, e.factor_id})) consistent = false;
            for (const auto& fid : s.factors_of(e.var))
                if (fid != e.factor_id) consistent = false;
        }
        if (consistent && soundness_oracle(g, s)) out.insert(std::move(s));
        size_t i = 0;
        for (; i < idx.size(); ++i) {
            if (++idx[i] < choices[i].size()) break;
            idx[i] = 0;
        }
        if (i == idx.size()) break;
    }
    return out;
}

Environment eight_schools_data() {
    Environment env;
    env["J"] = Value::integer(3);
    env["sigma"] = Value::array({1.0, 1.5, 2.0});
    return env;
}

// ---------------------------------------------------------------------------

void criterion_1() {
    Criterion c{1, "eight-schools pipeline reproduction"};
    Program prog;
    auto g = prior_graph(fixtures::eight_schools, &prog);
    c.expect(g.variables == std::set<std::string>{"mu", "tau", "theta"},
             "prior graph variables != {mu, tau, theta}");
    c.expect(g.factors.size() == 3, "prior graph should have 3 factors");

    auto r = recognizable_edges(g);
    c.expect(r.as_pairs() == std::set<std::pair<std::string, std::string>>{{"tau", "F13"},
                                                                           {"theta", "F14"}},
             "recognizable edges != {(tau,F13), (theta,F14)}");

    auto S = solve_selection_sets(g, r);
    c.expect(S.size() == 1, "|S| != 1");
    c.expect(build_queries(S, r, g).empty(), "expected zero user queries");

    auto dag = derive_dag_unattended(g);
    auto plan = sample_graph(dag, g, prog, SamplingPlan::Provenance::Prior);
    c.expect(plan.segments.size() == 3, "prior plan should have 3 segments");
    if (plan.segments.size() == 3) {
        c.expect(plan.segments[0].label == CodeSegment::Label::PDF &&
                     stmts_text(plan.segments[0]) == "target += -(mu - 1)^2;",
                 "segment 1 != (PDF, target += -(mu - 1)^2;)");
        c.expect(plan.segments[1].label == CodeSegment::Label::RNG &&
                     stmts_text(plan.segments[1]) == "tau = normal_rng(1, 1);",
                 "segment 2 != (RNG, tau = normal_rng(1, 1);)");
        c.expect(plan.segments[2].label == CodeSegment::Label::RNG &&
                     stmts_text(plan.segments[2]) == "theta = normal_rng(mu, tau);",
                 "segment 3 != (RNG, theta = normal_rng(mu, tau);)");
    }

    auto full = build_factor_graph(prog);
    auto pred = restrict_for_predictive(full, prog.parameter_vars());
    auto pred_plan = sample_graph(derive_dag_unattended(pred), pred, prog,
                                  SamplingPlan::Provenance::Predictive);
    c.expect(pred_plan.segments.size() == 1 &&
                 pred_plan.segments[0].label == CodeSegment::Label::RNG &&
                 stmts_text(pred_plan.segments[0]) == "y = normal_rng(theta, sigma);",
             "predictive plan != [(RNG, y = normal_rng(theta, sigma);)]");

    c.expect(synthesize_ppc(prog).size() == 1, "PPC synthesis should yield one program");
    c.finish(1.0);
}

void criterion_2() {
    Criterion c{2, "query-fixture reproduction"};
    auto g = prior_graph(fixtures::query_model);
    auto S = solve_selection_sets(g, recognizable_edges(g));
    c.expect(S.size() == 2, "|S| != 2");
    if (S.size() == 2) {
        auto it = S.begin();
        const auto& s1 = *it++;
        const auto& s2 = *it;
        std::set<std::pair<std::string, std::string>> diff;
        for (const auto& e : s1.edges)
            if (!s2.edges.count(e)) diff.insert(e);
        for (const auto& e : s2.edges)
            if (!s1.edges.count(e)) diff.insert(e);
        c.expect(diff == std::set<std::pair<std::string, std::string>>{{"c", "F16"},
                                                                       {"e", "F16"}},
                 "selections must differ exactly in F16 assigned to e vs c");
    }

    TempDir dir("c2");
    auto model = dir.write("q.ppl", fixtures::query_model);
    auto yes = cli({"transform", model}, "1\n");
    c.expect(yes.code == 0, "affirmative transform should exit 0");
    c.expect(yes.out.find("assign e = F15,F16") != std::string::npos,
             "expected A(e) = {F15, F16}");

    auto none = cli({"transform", model}, "0\n");
    c.expect(none.code == 3, "answering none should exit 3");
    c.expect(none.out.find("assign") == std::string::npos, "no DAG may be emitted");
    c.expect(none.err.find("no DAG can be derived") != std::string::npos,
             "missing no-DAG diagnostic");
    c.finish(1.0);
}

void criterion_3() {
    Criterion c{3, "challenge examples"};
    {
        Program prog = parse(fixtures::two_solutions);
        auto g = build_factor_graph(prog);
        auto S = solve_selection_sets(g, recognizable_edges(g));
        c.expect(S.size() == 2, "f1(x) f2(y) f3(x,y) should have |S| = 2");
        std::set<std::pair<std::string, std::string>> orderings;
        for (const auto& s : S) {
            auto d = contract(g, s);
            for (const auto& e : d.edges) orderings.insert(e);
        }
        c.expect(orderings == std::set<std::pair<std::string, std::string>>{{"x", "y"},
                                                                            {"y", "x"}},
                 "expected the two orderings x->y and y->x");
    }
    {
        Program prog = parse(fixtures::triangle);
        auto g = build_factor_graph(prog);
        c.expect(solve_selection_sets(g, recognizable_edges(g)).empty(),
                 "triangle should have S = empty");
        TempDir dir("c3");
        auto model = dir.write("t.ppl", fixtures::triangle);
        auto r = cli({"transform", model});
        c.expect(r.code == 3, "triangle transform should exit 3");
        c.expect(r.err.find("forward sampling is not possible") != std::string::npos,
                 "missing impossibility diagnostic");
    }
    c.finish();
}

void criterion_4() {
    Criterion c{4, "SAT oracle equivalence on 200 random factor graphs"};
    std::mt19937_64 gen(20240817);
    for (int rep = 0; rep < 200 && c.ok; ++rep) {
        std::uniform_int_distribution<int> nv_d(1, 4), nf_d(1, 5);
        int nv = nv_d(gen), nf = nf_d(gen);
        std::uniform_int_distribution<int> arity_d(1, std::min(3, nv));
        std::vector<std::set<int>> nbrs(nf);
        for (auto& ns : nbrs) {
            int arity = arity_d(gen);
            std::uniform_int_distribution<int> v_d(0, nv - 1);
            while (static_cast<int>(ns.size()) < arity) ns.insert(v_d(gen));
        }
        auto g = synthetic_graph(nv, nbrs);
        RecognizableSet r;
        std::uniform_real_distribution<double> coin(0, 1);
        for (int i = 0; i < nv; ++i) {
            std::string v = "v" + std::to_string(i);
            auto fids = g.factors_of(v);
            if (fids.empty() || coin(gen) > 0.3) continue;
            std::vector<std::string> fv(fids.begin(), fids.end());
            std::uniform_int_distribution<size_t> f_d(0, fv.size() - 1);
            r.edges.push_back({v, fv[f_d(gen)], "", {}});
        }
        c.expect(solve_selection_sets(g, r) == brute_force_S(g, r),
                 "mismatch against the exhaustive sigma oracle at graph " +
                     std::to_string(rep));
    }
    c.finish(30.0);
}

void criterion_5() {
    Criterion c{5, "density preservation for every fixture and selection"};
    struct Case {
        const char* src;
        std::vector<std::string> vars;
    };
    std::vector<Case> cases = {{fixtures::eight_schools, {"mu", "tau", "theta"}},
                               {fixtures::query_model, {"b", "c", "d", "e"}},
                               {fixtures::two_solutions, {"x", "y"}},
                               {fixtures::normal_normal, {"mu"}},
                               {fixtures::intermediate, {"mu", "x"}}};
    std::mt19937_64 gen(555);
    std::uniform_real_distribution<double> unif(0.2, 3.0);
    for (const auto& cs : cases) {
        Program prog;
        auto g = prior_graph(cs.src, &prog);
        auto S = solve_selection_sets(g, recognizable_edges(g));
        c.expect(!S.empty(), "fixture unexpectedly has no selection");
        for (const auto& s : S) {
            auto d = contract(g, s);
            double worst = 0;
            for (int rep = 0; rep < 100; ++rep) {
                Environment env;
                for (const auto& v : cs.vars) {
                    if (prog.symbols.at(v).type.dim)
                        env[v] = Value::array({unif(gen), unif(gen), unif(gen)});
                    else
                        env[v] = Value::real(unif(gen));
                }
                env["J"] = Value::integer(3);
                env["N"] = Value::integer(2);
                double joint = graph_log_density(g, prog, env);
                double sum = 0;
                for (const auto& v : cs.vars) sum += dag_variable_log_density(d, g, prog, v, env);
                worst = std::max(worst, std::abs(sum - joint));
            }
            c.expect(worst <= 1e-12,
                     "density mismatch " + std::to_string(worst) + " for a selection");
        }
    }
    c.finish();
}

void criterion_6() {
    Criterion c{6, "Theorem 2 proportionality on two-solution fixtures"};
    std::mt19937_64 gen(31337);
    std::uniform_real_distribution<double> unif(0.3, 2.5);
    for (const char* src : {fixtures::query_model, fixtures::two_solutions}) {
        Program prog;
        auto g = prior_graph(src, &prog);
        auto S = solve_selection_sets(g, recognizable_edges(g));
        c.expect(S.size() == 2, "fixture should have exactly two selections");
        if (S.size() != 2) continue;
        auto it = S.begin();
        auto d1 = contract(g, *it++);
        auto d2 = contract(g, *it);
        for (const auto& v : g.variables) {
            std::set<std::string> fixed = {v};
            for (const auto& p : d1.parents(v)) fixed.insert(p);
            for (const auto& p : d2.parents(v)) fixed.insert(p);
            Environment base;
            for (const auto& f : fixed) base[f] = Value::real(unif(gen));
            double lo = 0, hi = 0;
            bool first = true;
            for (int rep = 0; rep < 100; ++rep) {
                Environment env = base;
                for (const auto& u : g.variables)
                    if (!fixed.count(u)) env[u] = Value::real(unif(gen));
                double diff = dag_variable_log_density(d1, g, prog, v, env) -
                              dag_variable_log_density(d2, g, prog, v, env);
                if (first) {
                    lo = hi = diff;
                    first = false;
                } else {
                    lo = std::min(lo, diff);
                    hi = std::max(hi, diff);
                }
            }
            c.expect(hi - lo <= 1e-9,
                     "log-density difference for " + v + " has spread " +
                         std::to_string(hi - lo));
        }
    }
    c.finish();
}

void criterion_7() {
    Criterion c{7, "Theorem 1 statistical check at n = 50,000"};
    Program prog;
    auto g = prior_graph(fixtures::eight_schools, &prog);
    auto plan = sample_graph(derive_dag_unattended(g), g, prog, SamplingPlan::Provenance::Prior);
    auto data = eight_schools_data();
    const int n = 50000;
    const int ref_n = 50000;

    MhConfig fwd_cfg;
    fwd_cfg.warmup = 150;
    fwd_cfg.inner_iters = 100;
    auto t0 = std::chrono::steady_clock::now();
    auto forward = run_plan(prog, plan, data, n, 20240201, fwd_cfg);
    auto t1 = std::chrono::steady_clock::now();
    MhConfig ref_cfg;
    ref_cfg.step_size = 1.0;
    auto reference = reference_joint_sampler(g, prog, data, ref_n, 20240202, ref_cfg, 20);
    auto t2 = std::chrono::steady_clock::now();
    double fwd_s = std::chrono::duration<double>(t1 - t0).count();
    double ref_s = std::chrono::duration<double>(t2 - t1).count();

    auto report = equivalence_check(forward, reference);
    for (const auto& col : report.checks) {
        c.expect(col.mean_z <= 4.0, col.column + " mean z-score " + std::to_string(col.mean_z));
        c.expect(col.ks <= col.ks_crit, col.column + " KS " + std::to_string(col.ks) +
                                            " above critical " + std::to_string(col.ks_crit));
    }

    auto mu = forward.column("mu");
    double target_sd = std::sqrt(0.5);
    c.expect(std::abs(stats::mean(mu) - 1.0) <= 4 * target_sd / std::sqrt(double(n)),
             "mu mean off: " + std::to_string(stats::mean(mu)));
    c.expect(std::abs(stats::sample_sd(mu) - target_sd) <= 0.02 * target_sd,
             "mu sd off: " + std::to_string(stats::sample_sd(mu)));

    // wall-clock comparison on an all-RNG plan (no Metropolis in the forward path)
    Program nn;
    auto gnn = prior_graph(fixtures::normal_normal, &nn);
    auto full = build_factor_graph(nn);
    auto pred = restrict_for_predictive(full, nn.parameter_vars());
    auto rng_plan = build_ppc_plan(nn, gnn, derive_dag_unattended(gnn), pred,
                                   derive_dag_unattended(pred));
    for (const auto& seg : rng_plan.segments)
        c.expect(seg.label == CodeSegment::Label::RNG, "expected an all-RNG plan");
    auto t3 = std::chrono::steady_clock::now();
    auto rng_fwd = run_plan(nn, rng_plan, {}, n, 20240203, MhConfig{});
    auto t4 = std::chrono::steady_clock::now();
    auto rng_ref = reference_joint_sampler(gnn, nn, {}, ref_n, 20240204, ref_cfg, 20);
    auto t5 = std::chrono::steady_clock::now();
    double rng_fwd_s = std::chrono::duration<double>(t4 - t3).count();
    double rng_ref_s = std::chrono::duration<double>(t5 - t4).count();
    c.expect(rng_fwd.rows.size() == size_t(n) && rng_ref.rows.size() == size_t(ref_n),
             "all-RNG comparison tables incomplete");
    c.expect(rng_fwd_s < rng_ref_s, "forward sampling should beat the reference sampler");

    std::ostringstream timing;
    timing.setf(std::ios::fixed);
    timing.precision(2);
    timing << "wall-clock: eight-schools forward " << fwd_s << "s vs reference " << ref_s
           << "s; all-RNG forward " << rng_fwd_s << "s vs reference " << rng_ref_s << "s";
    c.notes.push_back(timing.str());
    c.finish(60.0);
}

void criterion_8() {
    Criterion c{8, "mutant detection: dropped factor fails equivalence"};
    Program prog;
    auto g = prior_graph(fixtures::eight_schools, &prog);
    auto plan = sample_graph(derive_dag_unattended(g), g, prog, SamplingPlan::Provenance::Prior);
    // drop F12 from A(mu): mu's conditional density degenerates to a constant
    for (auto& seg : plan.segments)
        if (seg.target_vars == std::vector<std::string>{"mu"}) seg.statements.clear();
    auto data = eight_schools_data();
    const int n = 8000;
    auto forward = run_plan(prog, plan, data, n, 99001, MhConfig{});
    MhConfig ref_cfg;
    ref_cfg.step_size = 1.0;
    auto reference = reference_joint_sampler(g, prog, data, n, 99002, ref_cfg, 20);
    auto report = equivalence_check(forward, reference);
    c.expect(!report.pass, "mutant run unexpectedly passed");
    bool mu_failed = false;
    for (const auto& col : report.checks)
        if (col.column == "mu" && !col.pass) mu_failed = true;
    c.expect(mu_failed, "the affected variable mu should fail");
    c.finish();
}

void criterion_9() {
    Criterion c{9, "SBC self-consistency on the conjugate fixture"};
    Program prog;
    auto g = prior_graph(fixtures::normal_normal, &prog);
    auto full = build_factor_graph(prog);
    auto pred = restrict_for_predictive(full, prog.parameter_vars());
    auto plan = build_ppc_plan(prog, g, derive_dag_unattended(g), pred,
                               derive_dag_unattended(pred));
    const int reps = 500, L = 31;
    auto table = run_plan(prog, plan, {}, reps, 424201, MhConfig{});
    auto mu0 = table.column("mu");
    auto y = table.column("y_sim");

    // exact conjugate posterior: mu | y ~ Normal(y/2, 1/sqrt(2))
    Rng rng = Rng::substream(424202, 0);
    double post_sd = 1.0 / std::sqrt(2.0);
    std::map<std::string, std::vector<double>> prior{{"mu", mu0}};
    std::map<std::string, std::vector<std::vector<double>>> post{{"mu", {}}};
    std::map<std::string, std::vector<std::vector<double>>> shifted{{"mu", {}}};
    for (int i = 0; i < reps; ++i) {
        std::vector<double> draws, bad;
        for (int k = 0; k < L; ++k) {
            double d = dist::rng("normal", {y[size_t(i)] / 2.0, post_sd}, rng);
            draws.push_back(d);
            bad.push_back(d + post_sd);
        }
        post["mu"].push_back(draws);
        shifted["mu"].push_back(bad);
    }
    auto good = sbc_ranks(prior, post, {"mu"});
    c.expect(good.uniformity.at("mu").p_value > 0.001,
             "self-consistent ranks not uniform: p = " +
                 std::to_string(good.uniformity.at("mu").p_value));
    auto mutant = sbc_ranks(prior, shifted, {"mu"});
    c.expect(mutant.uniformity.at("mu").p_value < 0.001,
             "shifted posterior went undetected: p = " +
                 std::to_string(mutant.uniformity.at("mu").p_value));
    c.finish(60.0);
}

void criterion_10() {
    Criterion c{10, "fixed-seed runs produce byte-identical artifacts"};
    TempDir dir("c10");
    auto es = dir.write("es.ppl", fixtures::eight_schools);
    auto q = dir.write("q.ppl", fixtures::query_model);
    auto data = dir.write("data.csv", "J,sigma[1],sigma[2],sigma[3]\n3,1,1.5,2\n");
    auto answers = dir.write("answers.txt", "c=1\n");

    std::vector<std::vector<std::string>> commands = {
        {"graph", es, "--emit", "fg", "--emit", "dep-graph"},
        {"transform", es, "--emit", "cnf", "--emit", "selections", "--emit", "fg"},
        {"transform", q, "--answers", answers},
        {"ppc", es},
        {"sbc", es},
        {"sample", es, "--seed", "7", "--draws", "40", "--warmup", "40", "--inner-iters",
         "40", "--data", data},
        {"check", es, "--seed", "7", "--draws", "400", "--warmup", "60", "--inner-iters",
         "60", "--step-size", "1.0", "--data", data},
    };

    for (size_t k = 0; k < commands.size(); ++k) {
        std::map<std::string, std::string> snapshots[2];
        for (int run = 0; run < 2; ++run) {
            TempDir out("c10_out");
            auto args = commands[k];
            args.push_back("--out");
            args.push_back(out.path.string());
            auto r = cli(args);
            c.expect(r.code == 0,
                     "command '" + commands[k][0] + "' exited " + std::to_string(r.code));
            // check prints wall-clock timing to stdout; its determinism contract
            // covers the artifact files only
            if (commands[k][0] != "check") snapshots[run]["<stdout>"] = r.out;
            for (const auto& entry : fs::directory_iterator(out.path)) {
                std::ifstream f(entry.path(), std::ios::binary);
                std::ostringstream buf;
                buf << f.rdbuf();
                snapshots[run][entry.path().filename().string()] = buf.str();
            }
        }
        c.expect(snapshots[0] == snapshots[1],
                 "command '" + commands[k][0] + "' output differs between runs");
    }
    c.finish();
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failures == 0) {
        std::cout << "all acceptance criteria passed\n";
        return 0;
    }
    std::cout << g_failures << " acceptance criteria failed\n";
    return 1;
}
