// Plan execution and statistical checking: RNG segments run through the
// interpreter, PDF segments draw via random-walk Metropolis, whole plans
// produce deterministic draw tables (one RNG substream per row), a reference
// joint Metropolis sampler serves as the correctness oracle, and the
// equivalence / SBC-uniformity reports implement the statistical tests.
#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fwdppl/codegen.hpp"
#include "fwdppl/eval.hpp"
#include "fwdppl/factorgraph.hpp"

namespace fwdppl {

struct MhConfig {
    double step_size = 0.5;
    int warmup = 500;
    int thin = 1;
    int inner_iters = 200;
};

struct DrawTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    int column_index(const std::string& name) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        return -1;
    }
    std::vector<double> column(const std::string& name) const {
        int idx = column_index(name);
        if (idx < 0) throw RuntimeError("no column named " + name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r[static_cast<size_t>(idx)]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Segment execution.

inline void exec_rng(const CodeSegment& seg, Environment& env, Rng& rng) {
    Executor ex(env, &rng, nullptr);
    for (const auto& s : seg.statements) {
        try {
            ex.exec(*s);
        } catch (const RuntimeError& e) {
            std::string target = seg.target_vars.empty() ? "?" : seg.target_vars[0];
            throw RuntimeError("in RNG segment for " + target + ": " + e.what());
        }
    }
}

namespace detail {

// Log density of the segment's statements at the current environment.
inline double segment_log_density(const CodeSegment& seg, Environment& env) {
    double target = 0.0;
    Executor ex(env, nullptr, &target);
    try {
        for (const auto& s : seg.statements) ex.exec(*s);
    } catch (const RejectSignal&) {
        return kNegInf;
    }
    return target;
}

}  // namespace detail

// One approximate draw of the segment's target variable via random-walk
// Metropolis over the unnormalized density its statements define. The target
// variable must already be bound in env (shape defines the state dimension).
inline void exec_pdf(const CodeSegment& seg, Environment& env, const MhConfig& cfg, Rng& rng,
                     std::vector<std::string>* warnings = nullptr) {
    const std::string& v = seg.target_vars.at(0);
    auto it = env.find(v);
    if (it == env.end()) throw RuntimeError("PDF segment target " + v + " not initialized");
    if (it->second.is_int)
        throw RuntimeError("PDF segment target " + v +
                           " is discrete; Metropolis supports continuous variables only");

    auto log_density = [&](const std::vector<double>& x) {
        env[v].elems = x;
        return detail::segment_log_density(seg, env);
    };

    std::vector<double> x = it->second.elems;
    double lp = log_density(x);
    if (std::isnan(lp)) throw RuntimeError("density is NaN at initialization of " + v);
    for (int attempt = 0; attempt < 100 && lp == kNegInf; ++attempt) {
        for (auto& xi : x) xi = rng.uniform01() * 4.0 - 2.0;
        lp = log_density(x);
    }
    if (lp == kNegInf)
        throw RuntimeError("could not find a positive-density initialization for " + v);

    int accepted = 0;
    int total = cfg.warmup + cfg.inner_iters;
    std::vector<double> prop = x;
    for (int iter = 0; iter < total; ++iter) {
        for (size_t i = 0; i < x.size(); ++i)
            prop[i] = x[i] + cfg.step_size * dist::rng("normal", {0.0, 1.0}, rng);
        double lp_prop = log_density(prop);
        if (std::log(rng.uniform01()) < lp_prop - lp) {
            x = prop;
            lp = lp_prop;
            ++accepted;
        }
    }
    if (accepted == 0 && warnings)
        warnings->push_back("all " + std::to_string(total) + " proposals rejected for " + v +
                            " (step_size=" + std::to_string(cfg.step_size) + ")");
    env[v].elems = x;
    env[v].is_int = false;
}

// ---------------------------------------------------------------------------
// Plan execution.

namespace detail {

inline int eval_dim(const Program& prog, const std::string& var, const Environment& env) {
    auto base = base_symbol(prog, var);
    const auto& type = prog.symbols.at(base).type;
    if (!type.dim) return 0;  // scalar
    Environment scratch = env;
    Evaluator ev(scratch, nullptr);
    return static_cast<int>(ev.eval(*type.dim).scalar_int());
}

inline Value initial_value(const Program& prog, const std::string& var, const Environment& env) {
    auto base = base_symbol(prog, var);
    const auto& type = prog.symbols.at(base).type;
    int dim = eval_dim(prog, var, env);
    Value val;
    val.is_int = type.is_int();
    val.is_scalar = dim == 0;
    val.elems.assign(dim == 0 ? 1 : static_cast<size_t>(dim), 0.0);
    return val;
}

inline void flatten_columns(const Program& prog, const std::vector<std::string>& vars,
                            const Environment& env, std::vector<std::string>& columns) {
    for (const auto& v : vars) {
        int dim = eval_dim(prog, v, env);
        if (dim == 0) {
            columns.push_back(v);
        } else {
            for (int i = 1; i <= dim; ++i) columns.push_back(v + "[" + std::to_string(i) + "]");
        }
    }
}

}  // namespace detail

// Executes the plan n_draws times; each row is one pass over all segments
// with an independent, deterministic RNG substream. Rows whose execution
// rejects or leaves a distribution's domain are discarded and redrawn from a
// fresh substream, so the table always holds n_draws valid rows.
inline DrawTable run_plan(const Program& prog, const SamplingPlan& plan,
                          const Environment& data_env, int n_draws, std::uint64_t seed,
                          const MhConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    DrawTable table;
    auto drawn = plan.drawn_vars();
    detail::flatten_columns(prog, drawn, data_env, table.columns);

    for (int row = 0; row < n_draws; ++row) {
        constexpr int kMaxAttempts = 1000;
        bool done = false;
        for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
            std::uint64_t stream =
                static_cast<std::uint64_t>(row) |
                (static_cast<std::uint64_t>(attempt) << 32);
            Rng rng = Rng::substream(seed, stream);
            Environment env = data_env;
            try {
                for (const auto& seg : plan.segments) {
                    // pre-bind targets with their declared shape so vectorized
                    // _rng assignments and Metropolis states have the right size
                    for (const auto& v : seg.target_vars)
                        if (!env.count(v)) env[v] = detail::initial_value(prog, v, env);
                    if (seg.label == CodeSegment::Label::RNG) {
                        exec_rng(seg, env, rng);
                    } else {
                        exec_pdf(seg, env, cfg, rng, warnings);
                    }
                }
            } catch (const RejectSignal&) {
                continue;  // discard the row, redraw from the next substream
            } catch (const RuntimeError&) {
                if (attempt + 1 == kMaxAttempts) throw;
                continue;
            }
            std::vector<double> out;
            for (const auto& v : drawn)
                for (double x : env.at(v).elems) out.push_back(x);
            if (out.size() != table.columns.size())
                throw RuntimeError("row " + std::to_string(row) + " has inconsistent shape");
            table.rows.push_back(std::move(out));
            done = true;
        }
        if (!done)
            throw RuntimeError("row " + std::to_string(row) +
                               ": no valid draw after retry limit");
    }
    return table;
}

// A synthesized program as a plan: transformed data and generated quantities
// are RNG segments, the parameters/model pair is a PDF segment.
inline SamplingPlan program_as_plan(const Program& p) {
    SamplingPlan plan;
    auto add_block = [&](BlockKind k) {
        const auto* stmts = p.block(k);
        if (!stmts || stmts->empty()) return;
        CodeSegment seg;
        seg.label = CodeSegment::Label::RNG;
        for (const auto& s : *stmts) {
            if (s->kind == Stmt::Kind::Decl) seg.target_vars.push_back(s->decl_name);
            seg.statements.push_back(s);
        }
        plan.segments.push_back(std::move(seg));
    };
    add_block(BlockKind::TransformedData);
    const auto* model = p.block(BlockKind::Model);
    if (model && !model->empty()) {
        CodeSegment seg;
        seg.label = CodeSegment::Label::PDF;
        std::vector<std::pair<int, std::string>> params;
        for (const auto& v : p.parameter_vars())
            params.push_back({p.symbols.at(v).decl_stmt_id, v});
        std::sort(params.begin(), params.end());
        for (const auto& [pos, v] : params) seg.target_vars.push_back(v);
        seg.statements = *model;
        plan.segments.push_back(std::move(seg));
    }
    add_block(BlockKind::GeneratedQuantities);
    return plan;
}

// Executes a chain of synthesized programs as a single composite plan: the
// environment carries draws across program boundaries, so the result matches
// executing the raw sampling plan with the same seed.
inline DrawTable run_programs(const std::vector<SynthesizedProgram>& programs,
                              const Environment& data_env, int n_draws, std::uint64_t seed,
                              const MhConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    if (programs.empty()) return {};
    SamplingPlan combined;
    for (const auto& sp : programs) {
        auto plan = program_as_plan(sp.program);
        for (auto& seg : plan.segments) combined.segments.push_back(std::move(seg));
    }
    // declaration shapes may live in different chain programs; merge the
    // symbol tables for column flattening and initialization
    Program shapes;
    for (const auto& sp : programs)
        for (const auto& [name, info] : sp.program.symbols)
            if (!shapes.symbols.count(name)) shapes.symbols[name] = info;

    // drop chained data inputs from the drawn set: only variables produced
    // by some program count as draws
    std::set<std::string> produced;
    for (const auto& sp : programs)
        for (const auto& v : sp.draws) produced.insert(v);
    for (auto& seg : combined.segments) {
        std::vector<std::string> keep;
        for (const auto& v : seg.target_vars)
            if (produced.count(v)) keep.push_back(v);
        seg.target_vars = std::move(keep);
    }
    return run_plan(shapes, combined, data_env, n_draws, seed, cfg, warnings);
}

// ---------------------------------------------------------------------------
// Reference joint sampler: single-site random-walk Metropolis over the full
// factor-graph density, warmup then `thin` sweeps per retained draw.

inline DrawTable reference_joint_sampler(const FactorGraph& g, const Program& prog,
                                         const Environment& data_env, int n_draws,
                                         std::uint64_t seed, const MhConfig& cfg,
                                         int thin_sweeps = 20) {
    std::vector<std::pair<int, std::string>> ordered;
    for (const auto& v : g.variables)
        if (!data_env.count(v))
            ordered.push_back({prog.symbols.at(v).decl_stmt_id, v});
    std::sort(ordered.begin(), ordered.end());
    std::vector<std::string> vars;
    for (const auto& [pos, v] : ordered) vars.push_back(v);

    DrawTable table;
    detail::flatten_columns(prog, vars, data_env, table.columns);

    Environment env = data_env;
    for (const auto& v : vars) env[v] = detail::initial_value(prog, v, env);
    auto joint = [&]() { return graph_log_density(g, prog, env); };

    Rng rng = Rng::substream(seed, 0);
    double lp = joint();
    for (int attempt = 0; attempt < 1000 && lp == kNegInf; ++attempt) {
        for (const auto& v : vars)
            for (auto& x : env[v].elems) x = rng.uniform01() * 4.0 - 2.0;
        lp = joint();
    }
    if (std::isnan(lp) || lp == kNegInf)
        throw RuntimeError("reference sampler: no positive-density initialization found");

    auto sweep = [&]() {
        for (const auto& v : vars) {
            for (size_t i = 0; i < env[v].elems.size(); ++i) {
                double old = env[v].elems[i];
                env[v].elems[i] = old + cfg.step_size * dist::rng("normal", {0.0, 1.0}, rng);
                double lp_prop = joint();
                if (std::log(rng.uniform01()) < lp_prop - lp) {
                    lp = lp_prop;
                } else {
                    env[v].elems[i] = old;
                }
            }
        }
    };

    for (int i = 0; i < cfg.warmup; ++i) sweep();
    for (int d = 0; d < n_draws; ++d) {
        for (int t = 0; t < thin_sweeps; ++t) sweep();
        std::vector<double> row;
        for (const auto& v : vars)
            for (double x : env.at(v).elems) row.push_back(x);
        table.rows.push_back(std::move(row));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Statistics.

namespace stats {

inline double mean(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_sd(const std::vector<double>& xs) {
    double m = mean(xs), s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        double fa = static_cast<double>(i) / static_cast<double>(a.size());
        double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

// Critical value c(alpha) * sqrt((n+m)/(n*m)) for the two-sample KS test.
inline double ks_critical(double alpha, size_t n, size_t m) {
    double c = std::sqrt(-std::log(alpha / 2.0) / 2.0);
    return c * std::sqrt(static_cast<double>(n + m) /
                         (static_cast<double>(n) * static_cast<double>(m)));
}

// Regularized incomplete gamma functions (series + continued fraction).
inline double gamma_p(double a, double x) {
    if (x < 0 || a <= 0) throw RuntimeError("gamma_p domain");
    if (x == 0) return 0;
    if (x < a + 1) {
        // series expansion
        double ap = a, sum = 1.0 / a, del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    // continued fraction for Q, then P = 1 - Q
    double b = x + 1 - a, c = 1e300, d = 1 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    return 1 - q;
}

// Upper-tail p-value of a chi-square statistic with k degrees of freedom.
inline double chi_square_p(double stat, double dof) {
    return 1.0 - gamma_p(dof / 2.0, stat / 2.0);
}

// Chi-square uniformity test over the L+1 possible ranks, binned to keep
// expected counts reasonable.
struct UniformityReport {
    double statistic = 0;
    double dof = 0;
    double p_value = 1;
};

inline UniformityReport rank_uniformity(const std::vector<int>& ranks, int L, int bins = 0) {
    if (bins <= 0) bins = L + 1;
    std::vector<double> counts(static_cast<size_t>(bins), 0.0);
    for (int r : ranks) {
        int b = static_cast<int>(static_cast<long long>(r) * bins / (L + 1));
        if (b >= bins) b = bins - 1;
        counts[static_cast<size_t>(b)] += 1;
    }
    double expected = static_cast<double>(ranks.size()) / bins;
    UniformityReport rep;
    for (double c : counts) rep.statistic += (c - expected) * (c - expected) / expected;
    rep.dof = bins - 1;
    rep.p_value = chi_square_p(rep.statistic, rep.dof);
    return rep;
}

}  // namespace stats

// ---------------------------------------------------------------------------
// Equivalence report: per-column mean/sd z-tests plus two-sample KS.

struct ColumnCheck {
    std::string column;
    double mean_z = 0;       // |mean difference| / combined SE
    double sd_z = 0;         // |sd difference| / combined SE of sd
    double ks = 0;           // KS statistic
    double ks_crit = 0;      // critical value at alpha
    bool pass = false;
};

struct EquivalenceReport {
    std::vector<ColumnCheck> checks;
    bool pass = false;
    double forward_seconds = 0;    // optional timing info filled by callers
    double reference_seconds = 0;

    std::string render(bool include_timing = true) const {
        std::ostringstream out;
        for (const auto& c : checks)
            out << (c.pass ? "PASS" : "FAIL") << " " << c.column << " mean_z=" << c.mean_z
                << " sd_z=" << c.sd_z << " ks=" << c.ks << " ks_crit=" << c.ks_crit << "\n";
        out << (pass ? "PASS" : "FAIL") << " overall\n";
        if (include_timing && forward_seconds > 0 && reference_seconds > 0)
            out << "timing forward=" << forward_seconds << "s reference=" << reference_seconds
                << "s\n";
        return out.str();
    }
};

inline EquivalenceReport equivalence_check(const DrawTable& forward, const DrawTable& reference,
                                           double z_tolerance = 4.0, double ks_alpha = 0.001) {
    std::set<std::string> fa(forward.columns.begin(), forward.columns.end());
    std::set<std::string> fb(reference.columns.begin(), reference.columns.end());
    std::set<std::string> common;
    for (const auto& c : fa)
        if (fb.count(c)) common.insert(c);
    if (common.empty()) throw RuntimeError("equivalence check: no common columns");

    EquivalenceReport rep;
    rep.pass = true;
    for (const auto& c : common) {
        auto xs = forward.column(c);
        auto ys = reference.column(c);
        double n = static_cast<double>(xs.size()), m = static_cast<double>(ys.size());
        double mx = stats::mean(xs), my = stats::mean(ys);
        double sx = stats::sample_sd(xs), sy = stats::sample_sd(ys);
        ColumnCheck cc;
        cc.column = c;
        double se_mean = std::sqrt(sx * sx / n + sy * sy / m);
        cc.mean_z = std::abs(mx - my) / se_mean;
        double se_sd = std::sqrt(sx * sx / (2 * (n - 1)) + sy * sy / (2 * (m - 1)));
        cc.sd_z = std::abs(sx - sy) / se_sd;
        cc.ks = stats::ks_statistic(xs, ys);
        cc.ks_crit = stats::ks_critical(ks_alpha, xs.size(), ys.size());
        cc.pass = cc.mean_z <= z_tolerance && cc.sd_z <= z_tolerance && cc.ks <= cc.ks_crit;
        rep.pass = rep.pass && cc.pass;
        rep.checks.push_back(cc);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// SBC ranks: per replication, the rank of the generating prior draw among L
// posterior draws (count strictly less).

struct SbcReport {
    std::map<std::string, std::vector<int>> ranks;  // per variable/column
    std::map<std::string, stats::UniformityReport> uniformity;
    int L = 0;

    bool pass(double alpha = 0.001) const {
        for (const auto& [v, rep] : uniformity)
            if (rep.p_value <= alpha) return false;
        return true;
    }
};

inline SbcReport sbc_ranks(const std::map<std::string, std::vector<double>>& prior_draws,
                           const std::map<std::string, std::vector<std::vector<double>>>&
                               posterior_draws_per_prior,
                           const std::vector<std::string>& variables) {
    SbcReport rep;
    for (const auto& v : variables) {
        const auto& prior = prior_draws.at(v);
        const auto& posts = posterior_draws_per_prior.at(v);
        if (prior.size() != posts.size())
            throw RuntimeError("sbc_ranks: replication count mismatch for " + v);
        std::vector<int> ranks;
        for (size_t i = 0; i < prior.size(); ++i) {
            int r = 0;
            for (double x : posts[i])
                if (x < prior[i]) ++r;
            ranks.push_back(r);
            rep.L = static_cast<int>(posts[i].size());
        }
        rep.uniformity[v] = stats::rank_uniformity(ranks, rep.L);
        rep.ranks[v] = std::move(ranks);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// CSV serialization: header of column names, 17 significant digits.

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

inline std::string to_csv(const DrawTable& table) {
    std::ostringstream out;
    for (size_t i = 0; i < table.columns.size(); ++i)
        out << (i ? "," : "") << table.columns[i];
    out << "\n";
    for (const auto& row : table.rows) {
        for (size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << detail::format_double(row[i]);
        out << "\n";
    }
    return out.str();
}

inline DrawTable from_csv(const std::string& text) {
    DrawTable table;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw RuntimeError("empty CSV document");
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != table.columns.size()) throw RuntimeError("ragged CSV row");
        table.rows.push_back(std::move(row));
    }
    return table;
}

// Environment/handoff files: one CSV with flattened variable columns and a
// single value row.
inline std::string env_to_csv(const Environment& env, const std::vector<std::string>& vars) {
    DrawTable t;
    std::vector<double> row;
    for (const auto& v : vars) {
        const Value& val = env.at(v);
        if (val.is_scalar) {
            t.columns.push_back(v);
            row.push_back(val.elems[0]);
        } else {
            for (size_t i = 0; i < val.elems.size(); ++i) {
                t.columns.push_back(v + "[" + std::to_string(i + 1) + "]");
                row.push_back(val.elems[i]);
            }
        }
    }
    t.rows.push_back(std::move(row));
    return to_csv(t);
}

inline Environment env_from_csv(const std::string& text) {
    DrawTable t = from_csv(text);
    if (t.rows.size() != 1) throw RuntimeError("environment CSV must have exactly one row");
    Environment env;
    for (size_t i = 0; i < t.columns.size(); ++i) {
        const std::string& c = t.columns[i];
        auto bracket = c.find('[');
        if (bracket == std::string::npos) {
            env[c] = Value::real(t.rows[0][i]);
        } else {
            std::string name = c.substr(0, bracket);
            if (!env.count(name)) {
                Value v;
                v.is_scalar = false;
                v.elems.clear();
                env[name] = v;
            }
            env[name].elems.push_back(t.rows[0][i]);
        }
    }
    return env;
}

}  // namespace fwdppl
