// Expression and statement evaluation: values, environments, builtin
// distribution densities and generators, and execution of statement lists
// with a target accumulator. Densities stay in log space throughout.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fwdppl/ast.hpp"

namespace fwdppl {

struct RuntimeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by `reject` statements; density evaluation catches it and yields
// log density -inf.
struct RejectSignal {
    std::string message;
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Value {
    bool is_int = false;
    bool is_scalar = true;
    std::vector<double> elems = {0.0};

    static Value real(double v) { return Value{false, true, {v}}; }
    static Value integer(long long v) { return Value{true, true, {double(v)}}; }
    static Value array(std::vector<double> vs, bool is_int = false) {
        return Value{is_int, false, std::move(vs)};
    }

    size_t size() const { return elems.size(); }

    double scalar() const {
        if (!is_scalar) throw RuntimeError("expected a scalar value");
        return elems[0];
    }

    long long scalar_int() const {
        double v = scalar();
        long long i = std::llround(v);
        if (double(i) != v) throw RuntimeError("expected an integer value");
        return i;
    }
};

// Deterministic, splittable randomness. Row substreams are derived as
// mt19937_64 seeded with splitmix64(master_seed ^ golden * index); the same
// (seed, index) always yields the same stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static Rng substream(uint64_t master_seed, uint64_t index) {
        return Rng(splitmix64(master_seed) ^ splitmix64(0x61c8864680b583ebULL * (index + 1)));
    }

    std::mt19937_64& engine() { return engine_; }

    double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

private:
    std::mt19937_64 engine_;
};

using Environment = std::map<std::string, Value>;

// ---------------------------------------------------------------------------
// Builtin densities (scalar). Parameter-domain violations yield -inf: the
// point has zero density, mirroring `reject` semantics.

namespace dist {

inline double normal_lpdf(double x, double mu, double sigma) {
    if (!(sigma > 0)) return kNegInf;
    double z = (x - mu) / sigma;
    return -0.5 * std::log(2 * M_PI) - std::log(sigma) - 0.5 * z * z;
}

inline double lognormal_lpdf(double x, double mu, double sigma) {
    if (!(sigma > 0) || !(x > 0)) return kNegInf;
    double z = (std::log(x) - mu) / sigma;
    return -0.5 * std::log(2 * M_PI) - std::log(sigma) - std::log(x) - 0.5 * z * z;
}

inline double exponential_lpdf(double x, double rate) {
    if (!(rate > 0) || x < 0) return kNegInf;
    return std::log(rate) - rate * x;
}

inline double gamma_lpdf(double x, double shape, double rate) {
    if (!(shape > 0) || !(rate > 0) || !(x > 0)) return kNegInf;
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1) * std::log(x) - rate * x;
}

inline double beta_lpdf(double x, double a, double b) {
    if (!(a > 0) || !(b > 0) || !(x > 0) || !(x < 1)) return kNegInf;
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(x) +
           (b - 1) * std::log1p(-x);
}

inline double uniform_lpdf(double x, double lo, double hi) {
    if (!(hi > lo) || x < lo || x > hi) return kNegInf;
    return -std::log(hi - lo);
}

inline double bernoulli_lpmf(double k, double p) {
    if (!(p >= 0) || !(p <= 1)) return kNegInf;
    if (k == 1) return std::log(p);
    if (k == 0) return std::log1p(-p);
    return kNegInf;
}

inline double poisson_lpmf(double k, double rate) {
    if (!(rate > 0) || k < 0 || k != std::floor(k)) return kNegInf;
    return k * std::log(rate) - rate - std::lgamma(k + 1);
}

inline double binomial_lpmf(double k, double n, double p) {
    if (n < 0 || n != std::floor(n) || !(p >= 0) || !(p <= 1)) return kNegInf;
    if (k < 0 || k > n || k != std::floor(k)) return kNegInf;
    double lchoose = std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
    if (p == 0) return k == 0 ? 0.0 : kNegInf;
    if (p == 1) return k == n ? 0.0 : kNegInf;
    return lchoose + k * std::log(p) + (n - k) * std::log1p(-p);
}

inline double lpdf(const std::string& name, double x, const std::vector<double>& params) {
    if (name == "normal") return normal_lpdf(x, params[0], params[1]);
    if (name == "lognormal") return lognormal_lpdf(x, params[0], params[1]);
    if (name == "exponential") return exponential_lpdf(x, params[0]);
    if (name == "gamma") return gamma_lpdf(x, params[0], params[1]);
    if (name == "beta") return beta_lpdf(x, params[0], params[1]);
    if (name == "uniform") return uniform_lpdf(x, params[0], params[1]);
    if (name == "bernoulli") return bernoulli_lpmf(x, params[0]);
    if (name == "poisson") return poisson_lpmf(x, params[0]);
    if (name == "binomial") return binomial_lpmf(x, params[0], params[1]);
    throw RuntimeError("unknown distribution '" + name + "'");
}

inline double rng(const std::string& name, const std::vector<double>& p, Rng& r) {
    auto require = [&](bool ok, const char* what) {
        if (!ok) throw RuntimeError(std::string(name) + "_rng: " + what);
    };
    auto& eng = r.engine();
    if (name == "normal") {
        require(p[1] > 0, "sigma must be positive");
        return std::normal_distribution<double>(p[0], p[1])(eng);
    }
    if (name == "lognormal") {
        require(p[1] > 0, "sigma must be positive");
        return std::lognormal_distribution<double>(p[0], p[1])(eng);
    }
    if (name == "exponential") {
        require(p[0] > 0, "rate must be positive");
        return std::exponential_distribution<double>(p[0])(eng);
    }
    if (name == "gamma") {
        require(p[0] > 0 && p[1] > 0, "shape and rate must be positive");
        // std::gamma_distribution is parameterized by shape/scale
        return std::gamma_distribution<double>(p[0], 1.0 / p[1])(eng);
    }
    if (name == "beta") {
        require(p[0] > 0 && p[1] > 0, "shape parameters must be positive");
        double a = std::gamma_distribution<double>(p[0], 1.0)(eng);
        double b = std::gamma_distribution<double>(p[1], 1.0)(eng);
        return a / (a + b);
    }
    if (name == "uniform") {
        require(p[1] > p[0], "upper bound must exceed lower bound");
        return std::uniform_real_distribution<double>(p[0], p[1])(eng);
    }
    if (name == "bernoulli") {
        require(p[0] >= 0 && p[0] <= 1, "probability must be in [0, 1]");
        return std::bernoulli_distribution(p[0])(eng) ? 1.0 : 0.0;
    }
    if (name == "poisson") {
        require(p[0] > 0, "rate must be positive");
        return double(std::poisson_distribution<long>(p[0])(eng));
    }
    if (name == "binomial") {
        require(p[0] >= 0 && p[0] == std::floor(p[0]), "count must be a nonnegative integer");
        require(p[1] >= 0 && p[1] <= 1, "probability must be in [0, 1]");
        return double(std::binomial_distribution<long>(long(p[0]), p[1])(eng));
    }
    throw RuntimeError("unknown distribution '" + name + "'");
}

inline double cdf(const std::string& name, double x, const std::vector<double>& p) {
    if (name == "normal") return 0.5 * std::erfc(-(x - p[0]) / (p[1] * std::sqrt(2.0)));
    if (name == "lognormal")
        return x <= 0 ? 0.0 : 0.5 * std::erfc(-(std::log(x) - p[0]) / (p[1] * std::sqrt(2.0)));
    if (name == "exponential") return x <= 0 ? 0.0 : -std::expm1(-p[0] * x);
    if (name == "uniform") {
        if (x <= p[0]) return 0.0;
        if (x >= p[1]) return 1.0;
        return (x - p[0]) / (p[1] - p[0]);
    }
    throw RuntimeError("cdf not implemented for '" + name + "'");
}

}  // namespace dist

// ---------------------------------------------------------------------------
// Expression evaluation

namespace detail {

inline Value broadcast_binary(const Value& a, const Value& b, double (*op)(double, double),
                              bool int_result) {
    if (a.is_scalar && b.is_scalar)
        return Value{int_result && a.is_int && b.is_int, true, {op(a.elems[0], b.elems[0])}};
    size_t n = a.is_scalar ? b.size() : a.size();
    if (!a.is_scalar && !b.is_scalar && a.size() != b.size())
        throw RuntimeError("size mismatch in elementwise operation");
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i)
        out[i] = op(a.elems[a.is_scalar ? 0 : i], b.elems[b.is_scalar ? 0 : i]);
    return Value::array(std::move(out));
}

inline double broadcast_at(const Value& v, size_t i) {
    return v.elems[v.is_scalar ? 0 : i];
}

inline size_t broadcast_size(const std::vector<Value>& vals) {
    size_t n = 1;
    for (const auto& v : vals)
        if (!v.is_scalar) {
            if (n != 1 && v.size() != n) throw RuntimeError("size mismatch in vectorized call");
            n = v.size();
        }
    return n;
}

}  // namespace detail

class Evaluator {
public:
    Evaluator(Environment& env, Rng* rng = nullptr) : env_(env), rng_(rng) {}

    Value eval(const Expr& e) const {
        switch (e.kind) {
        case Expr::Kind::RealLit: return Value::real(e.real_val);
        case Expr::Kind::IntLit: return Value::integer(e.int_val);
        case Expr::Kind::Var: return lookup(e.name);
        case Expr::Kind::Index: {
            Value base = eval(*e.args[0]);
            long long i = eval(*e.args[1]).scalar_int();
            if (base.is_scalar) throw RuntimeError("cannot index a scalar");
            if (i < 1 || size_t(i) > base.size())
                throw RuntimeError("index " + std::to_string(i) + " out of range");
            return Value{base.is_int, true, {base.elems[size_t(i - 1)]}};
        }
        case Expr::Kind::Unary: {
            Value v = eval(*e.args[0]);
            for (auto& x : v.elems) x = -x;
            return v;
        }
        case Expr::Kind::Binary: return eval_binary(e);
        case Expr::Kind::Call: return eval_call(e);
        }
        throw RuntimeError("bad expression");
    }

    // Sum of elementwise log densities: the value a `~` statement or an
    // lpdf/lpmf call contributes to target.
    double density_sum(const std::string& distname, const Value& variate,
                       const std::vector<Value>& params) const {
        std::vector<Value> all = {variate};
        all.insert(all.end(), params.begin(), params.end());
        size_t n = detail::broadcast_size(all);
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> ps;
            for (const auto& p : params) ps.push_back(detail::broadcast_at(p, i));
            total += dist::lpdf(distname, detail::broadcast_at(variate, i), ps);
        }
        return total;
    }

    Rng* rng() const { return rng_; }

private:
    Value lookup(const std::string& name) const {
        auto it = env_.find(name);
        if (it == env_.end()) throw RuntimeError("unbound variable '" + name + "'");
        return it->second;
    }

    Value eval_binary(const Expr& e) const {
        Value a = eval(*e.args[0]);
        Value b = eval(*e.args[1]);
        const std::string& op = e.op;
        auto apply = [&](double (*fn)(double, double), bool int_result) {
            return detail::broadcast_binary(a, b, fn, int_result);
        };
        if (op == "+") return apply([](double x, double y) { return x + y; }, true);
        if (op == "-") return apply([](double x, double y) { return x - y; }, true);
        if (op == "*") return apply([](double x, double y) { return x * y; }, true);
        if (op == "/") return apply([](double x, double y) { return x / y; }, false);
        if (op == "^") return apply([](double x, double y) { return std::pow(x, y); }, false);
        if (op == "<") return apply([](double x, double y) { return double(x < y); }, true);
        if (op == ">") return apply([](double x, double y) { return double(x > y); }, true);
        if (op == "<=") return apply([](double x, double y) { return double(x <= y); }, true);
        if (op == ">=") return apply([](double x, double y) { return double(x >= y); }, true);
        if (op == "==") return apply([](double x, double y) { return double(x == y); }, true);
        if (op == "!=") return apply([](double x, double y) { return double(x != y); }, true);
        throw RuntimeError("unknown operator '" + op + "'");
    }

    Value eval_call(const Expr& e) const {
        std::string suffix;
        std::string base = distribution_of_call(e.name, &suffix);
        if (!base.empty()) {
            std::vector<Value> args;
            for (const auto& a : e.args) args.push_back(eval(*a));
            if (suffix == "_lpdf" || suffix == "_lpmf") {
                std::vector<Value> params(args.begin() + 1, args.end());
                return Value::real(density_sum(base, args[0], params));
            }
            if (suffix == "_cdf") {
                std::vector<double> ps;
                for (size_t i = 1; i < args.size(); ++i) ps.push_back(args[i].scalar());
                return Value::real(dist::cdf(base, args[0].scalar(), ps));
            }
            // _rng: scalar draw; array-shaped draws are handled at the
            // assignment statement, which knows the declared shape
            if (!rng_) throw RuntimeError("rng call outside a sampling context");
            std::vector<double> ps;
            for (const auto& a : args) ps.push_back(a.scalar());
            return Value{is_discrete_distribution(base), true, {dist::rng(base, ps, *rng_)}};
        }
        // math builtins, elementwise
        std::vector<Value> args;
        for (const auto& a : e.args) args.push_back(eval(*a));
        const std::string& fn = e.name;
        if (fn == "pi") return Value::real(M_PI);
        auto unary = [&](double (*f)(double)) {
            Value v = args.at(0);
            for (auto& x : v.elems) x = f(x);
            v.is_int = false;
            return v;
        };
        if (fn == "log") return unary([](double x) { return std::log(x); });
        if (fn == "exp") return unary([](double x) { return std::exp(x); });
        if (fn == "sqrt") return unary([](double x) { return std::sqrt(x); });
        if (fn == "abs") return unary([](double x) { return std::fabs(x); });
        if (fn == "square") return unary([](double x) { return x * x; });
        if (fn == "pow")
            return detail::broadcast_binary(args.at(0), args.at(1),
                                            [](double x, double y) { return std::pow(x, y); },
                                            false);
        throw RuntimeError("unknown function '" + e.name + "'");
    }

    Environment& env_;
    Rng* rng_;
};

// ---------------------------------------------------------------------------
// Statement execution

class Executor {
public:
    // `target` may be null when no density accumulation is expected.
    Executor(Environment& env, Rng* rng = nullptr, double* target = nullptr)
        : env_(env), rng_(rng), target_(target), eval_(env, rng) {}

    void exec(const std::vector<StmtPtr>& stmts) {
        for (const auto& s : stmts) exec(*s);
    }

    void exec(const Stmt& s) {
        switch (s.kind) {
        case Stmt::Kind::Decl: exec_decl(s); break;
        case Stmt::Kind::Assign: exec_assign(s); break;
        case Stmt::Kind::TargetIncr: {
            add_target(eval_.eval(*s.rhs).scalar());
            break;
        }
        case Stmt::Kind::Tilde: {
            Value variate = eval_.eval(*Expr::var(s.lhs));
            std::vector<Value> params;
            for (const auto& a : s.args) params.push_back(eval_.eval(*a));
            add_target(eval_.density_sum(s.dist, variate, params));
            break;
        }
        case Stmt::Kind::For: {
            long long lo = eval_.eval(*s.lo).scalar_int();
            long long hi = eval_.eval(*s.hi).scalar_int();
            for (long long i = lo; i <= hi; ++i) {
                env_[s.loop_var] = Value::integer(i);
                exec(s.body);
            }
            env_.erase(s.loop_var);
            break;
        }
        case Stmt::Kind::IfElse: {
            if (eval_.eval(*s.cond).scalar() != 0.0)
                exec(s.body);
            else
                exec(s.else_body);
            break;
        }
        case Stmt::Kind::Reject:
            throw RejectSignal{s.message};
        }
    }

private:
    void add_target(double v) {
        if (!target_) throw RuntimeError("density statement outside a density context");
        *target_ += v;
    }

    void exec_decl(const Stmt& s) {
        if (env_.count(s.decl_name)) return;  // already bound (e.g. data)
        Value v;
        v.is_int = s.type.is_int();
        if (s.type.is_array()) {
            long long n = eval_.eval(*s.type.dim).scalar_int();
            if (n < 0) throw RuntimeError("negative array size for '" + s.decl_name + "'");
            v.is_scalar = false;
            v.elems.assign(size_t(n), 0.0);
        }
        env_[s.decl_name] = std::move(v);
    }

    void exec_assign(const Stmt& s) {
        if (s.lhs_index) {
            long long i = eval_.eval(*s.lhs_index).scalar_int();
            auto it = env_.find(s.lhs);
            if (it == env_.end()) throw RuntimeError("unbound variable '" + s.lhs + "'");
            Value& v = it->second;
            if (v.is_scalar) throw RuntimeError("cannot index a scalar");
            if (i < 1 || size_t(i) > v.size())
                throw RuntimeError("index " + std::to_string(i) + " out of range");
            v.elems[size_t(i - 1)] = eval_.eval(*s.rhs).scalar();
            return;
        }
        env_[s.lhs] = eval_rhs_shaped(s);
    }

    // An `_rng` call assigned to an array variable draws elementwise; the
    // declared shape decides how many variates are taken.
    Value eval_rhs_shaped(const Stmt& s) {
        const Expr& rhs = *s.rhs;
        std::string suffix;
        std::string base;
        if (rhs.kind == Expr::Kind::Call) base = distribution_of_call(rhs.name, &suffix);
        if (base.empty() || suffix != "_rng") return eval_.eval(rhs);

        size_t n = target_shape(s.lhs);
        std::vector<Value> params;
        for (const auto& a : rhs.args) params.push_back(eval_.eval(*a));
        size_t param_n = detail::broadcast_size(params);
        if (n == 1 && param_n > 1) n = param_n;
        if (param_n != 1 && param_n != n)
            throw RuntimeError("size mismatch in vectorized rng call");
        if (!rng_) throw RuntimeError("rng call outside a sampling context");

        std::vector<double> out(n);
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> ps;
            for (const auto& p : params) ps.push_back(detail::broadcast_at(p, i));
            out[i] = dist::rng(base, ps, *rng_);
        }
        bool is_int = is_discrete_distribution(base);
        if (n == 1 && scalar_target(s.lhs)) return Value{is_int, true, {out[0]}};
        return Value::array(std::move(out), is_int);
    }

    size_t target_shape(const std::string& name) const {
        auto it = env_.find(name);
        if (it != env_.end() && !it->second.is_scalar) return it->second.size();
        return 1;
    }

    bool scalar_target(const std::string& name) const {
        auto it = env_.find(name);
        return it == env_.end() || it->second.is_scalar;
    }

    Environment& env_;
    Rng* rng_;
    double* target_;
    Evaluator eval_;
};

// Log joint density of the model block evaluated at `env` (which must bind
// all data, parameters, and intermediates feeding the model). Rejections
// yield -inf.
inline double model_log_density(const Program& prog, Environment env) {
    double target = 0.0;
    Executor ex(env, nullptr, &target);
    try {
        for (const auto& [kind, stmts] : prog.blocks) {
            if (kind == BlockKind::TransformedData || kind == BlockKind::TransformedParameters)
                ex.exec(stmts);
            if (kind == BlockKind::Model) ex.exec(stmts);
        }
    } catch (const RejectSignal&) {
        return kNegInf;
    }
    return target;
}

}  // namespace fwdppl
