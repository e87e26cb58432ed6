// Generic propositional-logic layer: formula trees over named atoms, Tseitin
// CNF conversion, and all-solutions enumeration projected onto a designated
// atom subset. The solver is a small self-contained DPLL with unit
// propagation and blocking clauses; instances here are tiny, so hermeticity
// beats raw speed, and the CnfInstance interface leaves room to swap in a
// faster engine later.
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fwdppl {

struct Formula;
using FormulaPtr = std::shared_ptr<Formula>;

struct Formula {
    enum class Kind { Atom, Not, And, Or, Implies, True, False };

    Kind kind;
    std::string atom;                 // Atom
    std::vector<FormulaPtr> operands; // Not: 1; Implies: 2; And/Or: n

    static FormulaPtr make_atom(std::string name) {
        auto f = std::make_shared<Formula>();
        f->kind = Kind::Atom;
        f->atom = std::move(name);
        return f;
    }
    static FormulaPtr make_not(FormulaPtr a) {
        auto f = std::make_shared<Formula>();
        f->kind = Kind::Not;
        f->operands = {std::move(a)};
        return f;
    }
    static FormulaPtr make_and(std::vector<FormulaPtr> xs) {
        if (xs.empty()) return make_true();
        if (xs.size() == 1) return xs[0];
        auto f = std::make_shared<Formula>();
        f->kind = Kind::And;
        f->operands = std::move(xs);
        return f;
    }
    static FormulaPtr make_or(std::vector<FormulaPtr> xs) {
        if (xs.empty()) return make_false();
        if (xs.size() == 1) return xs[0];
        auto f = std::make_shared<Formula>();
        f->kind = Kind::Or;
        f->operands = std::move(xs);
        return f;
    }
    static FormulaPtr make_implies(FormulaPtr a, FormulaPtr b) {
        auto f = std::make_shared<Formula>();
        f->kind = Kind::Implies;
        f->operands = {std::move(a), std::move(b)};
        return f;
    }
    static FormulaPtr make_true() {
        auto f = std::make_shared<Formula>();
        f->kind = Kind::True;
        return f;
    }
    static FormulaPtr make_false() {
        auto f = std::make_shared<Formula>();
        f->kind = Kind::False;
        return f;
    }

    std::set<std::string> atoms() const {
        std::set<std::string> out;
        collect_atoms(out);
        return out;
    }

    bool evaluate(const std::set<std::string>& true_atoms) const {
        switch (kind) {
        case Kind::Atom: return true_atoms.count(atom) > 0;
        case Kind::Not: return !operands[0]->evaluate(true_atoms);
        case Kind::And:
            for (const auto& o : operands)
                if (!o->evaluate(true_atoms)) return false;
            return true;
        case Kind::Or:
            for (const auto& o : operands)
                if (o->evaluate(true_atoms)) return true;
            return false;
        case Kind::Implies:
            return !operands[0]->evaluate(true_atoms) || operands[1]->evaluate(true_atoms);
        case Kind::True: return true;
        case Kind::False: return false;
        }
        return false;
    }

private:
    void collect_atoms(std::set<std::string>& out) const {
        if (kind == Kind::Atom) out.insert(atom);
        for (const auto& o : operands) o->collect_atoms(out);
    }
};

struct CnfInstance {
    std::vector<std::vector<int>> clauses;  // literals; positive = atom true
    std::map<std::string, int> atom_to_var; // 1-based variable indices
    std::vector<std::string> var_to_atom;   // var_to_atom[i-1] = name; "" = auxiliary
    std::set<std::string> projection;       // atoms defining solution identity

    int num_vars() const { return static_cast<int>(var_to_atom.size()); }
};

// Tseitin conversion. Top-level conjunctions are flattened directly into
// clauses; only genuinely nested subformulas get auxiliary variables, which
// stay out of the projection set.
inline CnfInstance to_cnf(const Formula& f, std::set<std::string> projection = {}) {
    CnfInstance cnf;
    auto var_of = [&cnf](const std::string& name) {
        auto it = cnf.atom_to_var.find(name);
        if (it != cnf.atom_to_var.end()) return it->second;
        cnf.var_to_atom.push_back(name);
        int v = cnf.num_vars();
        cnf.atom_to_var[name] = v;
        return v;
    };
    auto aux = [&cnf]() {
        cnf.var_to_atom.push_back("");
        return cnf.num_vars();
    };

    // returns a literal equisatisfiably representing the subformula
    std::function<int(const Formula&)> lit = [&](const Formula& g) -> int {
        switch (g.kind) {
        case Formula::Kind::Atom:
            return var_of(g.atom);
        case Formula::Kind::Not:
            return -lit(*g.operands[0]);
        case Formula::Kind::True: {
            int v = aux();
            cnf.clauses.push_back({v});
            return v;
        }
        case Formula::Kind::False: {
            int v = aux();
            cnf.clauses.push_back({-v});
            return v;
        }
        case Formula::Kind::Implies: {
            int a = lit(*g.operands[0]);
            int b = lit(*g.operands[1]);
            int v = aux();
            // v <-> (¬a ∨ b)
            cnf.clauses.push_back({-v, -a, b});
            cnf.clauses.push_back({v, a});
            cnf.clauses.push_back({v, -b});
            return v;
        }
        case Formula::Kind::And: {
            std::vector<int> ls;
            for (const auto& o : g.operands) ls.push_back(lit(*o));
            int v = aux();
            std::vector<int> back{v};
            for (int l : ls) {
                cnf.clauses.push_back({-v, l});
                back.push_back(-l);
            }
            cnf.clauses.push_back(back);
            return v;
        }
        case Formula::Kind::Or: {
            std::vector<int> ls;
            for (const auto& o : g.operands) ls.push_back(lit(*o));
            int v = aux();
            std::vector<int> fwd{-v};
            for (int l : ls) {
                cnf.clauses.push_back({v, -l});
                fwd.push_back(l);
            }
            cnf.clauses.push_back(fwd);
            return v;
        }
        }
        return 0;
    };

    // assert the formula at top level, flattening conjunctions and clauses
    std::function<void(const Formula&)> assert_top = [&](const Formula& g) {
        switch (g.kind) {
        case Formula::Kind::True:
            return;
        case Formula::Kind::False:
            cnf.clauses.push_back({});
            return;
        case Formula::Kind::And:
            for (const auto& o : g.operands) assert_top(*o);
            return;
        case Formula::Kind::Implies: {
            Formula disj;
            disj.kind = Formula::Kind::Or;
            disj.operands = {Formula::make_not(g.operands[0]), g.operands[1]};
            assert_top(disj);
            return;
        }
        case Formula::Kind::Or: {
            // clause if all disjuncts are literals, else Tseitin
            std::vector<int> clause;
            bool flat = true;
            for (const auto& o : g.operands) {
                if (o->kind == Formula::Kind::Atom) {
                    clause.push_back(var_of(o->atom));
                } else if (o->kind == Formula::Kind::Not &&
                           o->operands[0]->kind == Formula::Kind::Atom) {
                    clause.push_back(-var_of(o->operands[0]->atom));
                } else {
                    flat = false;
                    break;
                }
            }
            if (flat) {
                cnf.clauses.push_back(std::move(clause));
            } else {
                cnf.clauses.push_back({lit(g)});
            }
            return;
        }
        default:
            cnf.clauses.push_back({lit(g)});
            return;
        }
    };
    assert_top(f);

    // keep only projection atoms that actually appear
    for (const auto& a : projection)
        if (cnf.atom_to_var.count(a)) cnf.projection.insert(a);
    return cnf;
}

namespace detail {

// DPLL with unit propagation; assignment values: 0 unknown, 1 true, -1 false.
// Decision order is ascending variable index for reproducibility.
class DpllSolver {
public:
    explicit DpllSolver(const CnfInstance& cnf) : cnf_(cnf) {}

    // extra clauses accumulate blocking clauses between calls
    bool solve(const std::vector<std::vector<int>>& extra, std::vector<int>& model) {
        clauses_ = cnf_.clauses;
        clauses_.insert(clauses_.end(), extra.begin(), extra.end());
        for (const auto& c : clauses_)
            if (c.empty()) return false;
        std::vector<int> assign(cnf_.num_vars() + 1, 0);
        if (!search(assign)) return false;
        model = std::move(assign);
        return true;
    }

private:
    bool propagate(std::vector<int>& assign) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& c : clauses_) {
                int unassigned = 0, free_lit = 0;
                bool satisfied = false;
                for (int l : c) {
                    int v = assign[std::abs(l)];
                    if (v == 0) {
                        ++unassigned;
                        free_lit = l;
                    } else if ((l > 0) == (v > 0)) {
                        satisfied = true;
                        break;
                    }
                }
                if (satisfied) continue;
                if (unassigned == 0) return false;  // conflict
                if (unassigned == 1) {
                    assign[std::abs(free_lit)] = free_lit > 0 ? 1 : -1;
                    changed = true;
                }
            }
        }
        return true;
    }

    bool search(std::vector<int>& assign) {
        if (!propagate(assign)) return false;
        int pick = 0;
        for (int v = 1; v <= cnf_.num_vars(); ++v)
            if (assign[v] == 0) {
                pick = v;
                break;
            }
        if (pick == 0) return true;
        for (int phase : {1, -1}) {
            auto saved = assign;
            assign[pick] = phase;
            if (search(assign)) return true;
            assign = std::move(saved);
        }
        return false;
    }

    const CnfInstance& cnf_;
    std::vector<std::vector<int>> clauses_;
};

}  // namespace detail

// All distinct projections (onto the projection set) of satisfying
// assignments, via blocking clauses over the projection literals.
inline std::set<std::set<std::string>> enumerate_projected(const CnfInstance& cnf,
                                                           int* solver_calls = nullptr) {
    std::vector<int> proj_vars;
    for (const auto& a : cnf.projection) proj_vars.push_back(cnf.atom_to_var.at(a));
    std::sort(proj_vars.begin(), proj_vars.end());

    detail::DpllSolver solver(cnf);
    std::vector<std::vector<int>> blocking;
    std::set<std::set<std::string>> out;
    int calls = 0;
    std::vector<int> model;
    while (true) {
        ++calls;
        if (!solver.solve(blocking, model)) break;
        std::set<std::string> solution;
        std::vector<int> block;
        for (int v : proj_vars) {
            if (model[v] > 0) {
                solution.insert(cnf.var_to_atom[v - 1]);
                block.push_back(-v);
            } else {
                block.push_back(v);
            }
        }
        out.insert(std::move(solution));
        if (proj_vars.empty()) break;  // single (empty) projection
        blocking.push_back(std::move(block));
    }
    if (solver_calls) *solver_calls = calls;
    return out;
}

// DIMACS export with the projection set in comment lines.
inline std::string to_dimacs(const CnfInstance& cnf) {
    std::ostringstream out;
    for (const auto& a : cnf.projection)
        out << "c projected " << cnf.atom_to_var.at(a) << " " << a << "\n";
    for (int v = 1; v <= cnf.num_vars(); ++v)
        if (!cnf.var_to_atom[v - 1].empty() && !cnf.projection.count(cnf.var_to_atom[v - 1]))
            out << "c atom " << v << " " << cnf.var_to_atom[v - 1] << "\n";
    out << "p cnf " << cnf.num_vars() << " " << cnf.clauses.size() << "\n";
    for (const auto& c : cnf.clauses) {
        for (int l : c) out << l << " ";
        out << "0\n";
    }
    return out.str();
}

}  // namespace fwdppl
