#pragma once

// Verification machinery: a literal constraint checker, a brute-force grid
// optimizer for tiny nodes, and the demand-proportional reference model that
// the priority-based solvers are compared against.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "lnctm/common.hpp"
#include "lnctm/node.hpp"

namespace lnctm {

enum class Constraint {
    Nonnegativity,
    Demand,
    Supply,
    Proportionality,
    RelaxedFifo,
    Priority,
    ActiveConstraint,
};

inline constexpr Constraint kAllConstraints[] = {
    Constraint::Nonnegativity, Constraint::Demand,   Constraint::Supply,          Constraint::Proportionality,
    Constraint::RelaxedFifo,   Constraint::Priority, Constraint::ActiveConstraint,
};

inline const char* to_string(Constraint c) {
    switch (c) {
        case Constraint::Nonnegativity: return "nonnegativity";
        case Constraint::Demand: return "demand";
        case Constraint::Supply: return "supply";
        case Constraint::Proportionality: return "proportionality";
        case Constraint::RelaxedFifo: return "relaxed-fifo";
        case Constraint::Priority: return "priority";
        case Constraint::ActiveConstraint: return "active-constraint";
    }
    return "?";
}

struct ConstraintStatus {
    Constraint constraint;
    double worst = 0.0;        // largest violation found, 0 if none
    std::string where;         // indices of the worst offender
    bool satisfied = true;
};

struct ConstraintReport {
    std::vector<ConstraintStatus> statuses;
    double tolerance = 0.0;

    bool satisfied() const {
        return std::all_of(statuses.begin(), statuses.end(), [](const auto& s) { return s.satisfied; });
    }
    const ConstraintStatus& operator[](Constraint c) const {
        for (const auto& s : statuses)
            if (s.constraint == c) return s;
        throw std::out_of_range("constraint not evaluated");
    }
    std::string summary() const {
        std::string out;
        for (const auto& s : statuses) {
            if (s.satisfied) continue;
            if (!out.empty()) out += "; ";
            out += std::string(to_string(s.constraint)) + " violated by " + std::to_string(s.worst) + " at " + s.where;
        }
        return out.empty() ? "satisfied" : out;
    }
};

namespace detail {

inline std::string movement_name(std::size_t i, std::size_t j) {
    return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

// Bound on movement (i, j) implied by the flow ratio achieved on (i, jp).
inline double relaxed_fifo_bound(const NodeSpec& spec, const FlowSolution& sol, std::size_t i, std::size_t jp,
                                 std::size_t j) {
    const double e = spec.eta(i, jp, j);
    const double sij = spec.oriented_total(i, j);
    const double ratio = sol.movement_total(i, jp) / spec.oriented_total(i, jp);
    return (1.0 - e) * sij + e * ratio * sij;
}

}  // namespace detail

/// Evaluates each constraint of the node problem on a candidate solution.
/// Priorities are judged at the total-flow level, per output, through the
/// restricted-input categories: an input below its demand needs an output
/// where it holds the largest flow-to-priority ratio and at least its
/// priority share of supply.
inline ConstraintReport check_solution(const NodeSpec& spec, const FlowSolution& sol, double tol,
                                       bool include_active = true) {
    if (sol.inputs != spec.inputs || sol.outputs != spec.outputs || sol.commodities != spec.commodities ||
        sol.flow.size() != spec.inputs * spec.outputs * spec.commodities)
        throw DimensionMismatch("solution dimensions do not match the node");
    const std::size_t M = spec.inputs, N = spec.outputs, C = spec.commodities;

    ConstraintReport report;
    report.tolerance = tol;
    auto status = [&](Constraint c) -> ConstraintStatus& {
        for (auto& s : report.statuses)
            if (s.constraint == c) return s;
        report.statuses.emplace_back().constraint = c;
        return report.statuses.back();
    };
    auto record = [&](Constraint c, double violation, const std::string& where) {
        auto& s = status(c);
        if (violation > s.worst) {
            s.worst = violation;
            s.where = where;
        }
        if (violation > tol) s.satisfied = false;
    };
    for (Constraint c : kAllConstraints)
        if (include_active || c != Constraint::ActiveConstraint) status(c);

    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const double sij = spec.oriented_total(i, j), fij = sol.movement_total(i, j);
            for (std::size_t c = 0; c < C; ++c) {
                const std::string where = detail::movement_name(i, j) + " commodity " + std::to_string(c);
                record(Constraint::Nonnegativity, -sol.f(i, j, c), where);
                record(Constraint::Demand, sol.f(i, j, c) - spec.oriented(i, j, c), where);
                if (sij > 0.0) record(Constraint::Proportionality,
                                      std::abs(sol.f(i, j, c) - spec.oriented(i, j, c) * fij / sij), where);
            }
        }
    for (std::size_t j = 0; j < N; ++j)
        record(Constraint::Supply, sol.output_total(j) - spec.supply[j], "output " + std::to_string(j));

    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            if (spec.oriented_total(i, j) <= 0.0) continue;
            for (std::size_t jp = 0; jp < N; ++jp) {
                if (jp == j || spec.oriented_total(i, jp) <= 0.0) continue;
                record(Constraint::RelaxedFifo,
                       sol.movement_total(i, j) - detail::relaxed_fifo_bound(spec, sol, i, jp, j),
                       "input " + std::to_string(i) + " output " + std::to_string(j) + " restricted by " +
                           std::to_string(jp));
            }
        }

    // Priorities. When no input with demand has positive priority every
    // input counts equally.
    std::vector<bool> has_demand(M);
    for (std::size_t i = 0; i < M; ++i) has_demand[i] = spec.input_demand(i) > 0.0;
    auto p = detail::effective_priorities(spec.priority, has_demand);
    double psum_all = 0.0;
    for (double x : p) psum_all += x;
    if (psum_all > 0.0)
        for (double& x : p) x /= psum_all;  // keeps condition (a) on the scale of flows
    auto oriented_priority = [&](std::size_t i, std::size_t j) {
        const double si = spec.input_demand(i);
        return si > 0.0 ? p[i] * spec.oriented_total(i, j) / si : 0.0;
    };
    for (std::size_t i = 0; i < M; ++i) {
        if (!has_demand[i] || sol.input_total(i) >= spec.input_demand(i) - tol) continue;
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = N;
        for (std::size_t j = 0; j < N; ++j) {
            const double pij = oriented_priority(i, j);
            if (spec.oriented_total(i, j) <= 0.0) continue;
            const double fij = sol.movement_total(i, j);
            double worst = 0.0, psum = 0.0;
            for (std::size_t k = 0; k < M; ++k) {
                psum += oriented_priority(k, j);
                if (k == i) continue;
                worst = std::max(worst, pij * sol.movement_total(k, j) - oriented_priority(k, j) * fij);
            }
            if (psum > 0.0) worst = std::max(worst, pij / psum * spec.supply[j] - fij);
            if (worst < best) {
                best = worst;
                best_j = j;
            }
        }
        record(Constraint::Priority, best,
               "input " + std::to_string(i) + (best_j < N ? " best output " + std::to_string(best_j) : ""));
    }

    if (include_active) {
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                const double sij = spec.oriented_total(i, j);
                if (sij <= 0.0) continue;
                const double fij = sol.movement_total(i, j);
                double slack = sij - fij;
                slack = std::min(slack, spec.supply[j] - sol.output_total(j));
                for (std::size_t jp = 0; jp < N; ++jp) {
                    if (jp == j || spec.oriented_total(i, jp) <= 0.0) continue;
                    slack = std::min(slack, detail::relaxed_fifo_bound(spec, sol, i, jp, j) - fij);
                }
                record(Constraint::ActiveConstraint, std::max(0.0, slack), detail::movement_name(i, j));
            }
    }
    return report;
}

struct GridResult {
    double best_total = 0.0;
    FlowSolution witness;
    double cell = 0.0;   // largest grid step over all dimensions
    double slack = 0.0;  // one cell per dimension
    long long points_checked = 0;
};

/// Exhaustive search for the largest feasible total flow on a per-movement
/// grid with `steps` intervals per movement. Feasibility is check_solution
/// without the active-constraint property; linear constraints are enforced
/// at 1e-9, the ratio comparisons of the priority constraint at one cell.
inline GridResult grid_optimal_flow(const NodeSpec& spec, int steps) {
    require_valid(spec);
    const std::size_t M = spec.inputs, N = spec.outputs;
    if (M > 2 || N > 3 || spec.commodities != 1) throw TooLarge("grid search supports M <= 2, N <= 3, C = 1");
    if (steps < 1 || steps > 50) throw TooLarge("grid resolution must be between 1 and 50 steps");

    GridResult result;
    result.witness = FlowSolution::sized(M, N, 1);

    // Grid dimensions: movements with positive demand.
    std::vector<std::vector<std::size_t>> dims(M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j)
            if (spec.oriented_total(i, j) > 0.0) {
                dims[i].push_back(j);
                const double cell = spec.oriented_total(i, j) / steps;
                result.cell = std::max(result.cell, cell);
                result.slack += cell;
            }

    // Candidate vectors per input, filtered by the input's own demand, supply
    // and relaxed FIFO constraints, sorted by total flow descending.
    struct Candidate {
        std::vector<double> flows;  // per output
        double total;
    };
    std::vector<std::vector<Candidate>> cands(M);
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t d = dims[i].size();
        std::vector<int> counter(d, 0);
        while (true) {
            Candidate cand{std::vector<double>(N, 0.0), 0.0};
            for (std::size_t k = 0; k < d; ++k) {
                const std::size_t j = dims[i][k];
                cand.flows[j] = spec.oriented_total(i, j) * counter[k] / steps;
                cand.total += cand.flows[j];
            }
            bool ok = true;
            for (std::size_t k = 0; k < d && ok; ++k) {
                const std::size_t j = dims[i][k];
                if (cand.flows[j] > spec.supply[j] + kTolerance) ok = false;
                for (std::size_t kp = 0; kp < d && ok; ++kp) {
                    if (kp == k) continue;
                    const std::size_t jp = dims[i][kp];
                    const double e = spec.eta(i, jp, j);
                    const double bound = (1.0 - e) * spec.oriented_total(i, j) +
                                         e * cand.flows[jp] / spec.oriented_total(i, jp) * spec.oriented_total(i, j);
                    if (cand.flows[j] > bound + kTolerance) ok = false;
                }
            }
            if (ok) cands[i].push_back(std::move(cand));
            std::size_t k = 0;
            while (k < d && ++counter[k] > steps) counter[k++] = 0;
            if (k == d) break;
        }
        std::stable_sort(cands[i].begin(), cands[i].end(),
                         [](const Candidate& a, const Candidate& b) { return a.total > b.total; });
    }

    const double priority_tol = result.cell;
    auto feasible = [&](const FlowSolution& sol) {
        ++result.points_checked;
        const auto report = check_solution(spec, sol, kTolerance, false);
        for (const auto& s : report.statuses) {
            if (s.satisfied) continue;
            if (s.constraint == Constraint::Priority && s.worst <= priority_tol) continue;
            return false;
        }
        return true;
    };
    auto make = [&](const std::vector<const Candidate*>& pick) {
        FlowSolution sol = FlowSolution::sized(M, N, 1);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) sol.f(i, j, 0) = pick[i]->flows[j];
        return sol;
    };

    double best = -1.0;
    if (M == 1) {
        for (const auto& a : cands[0]) {
            auto sol = make({&a});
            if (feasible(sol)) {
                best = a.total;
                result.witness = sol;
                break;
            }
        }
    } else {
        for (const auto& a : cands[0]) {
            if (!cands[1].empty() && a.total + cands[1].front().total <= best) break;
            // The second input can use at most the supply the first leaves.
            double room = 0.0;
            for (std::size_t j : dims[1]) room += std::min(spec.oriented_total(1, j), spec.supply[j] - a.flows[j]);
            if (a.total + room <= best) continue;
            for (const auto& b : cands[1]) {
                if (a.total + b.total <= best) break;
                bool fits = true;
                for (std::size_t j = 0; j < N && fits; ++j)
                    if (a.flows[j] + b.flows[j] > spec.supply[j] + kTolerance) fits = false;
                if (!fits) continue;
                auto sol = make({&a, &b});
                if (feasible(sol)) {
                    best = a.total + b.total;
                    result.witness = sol;
                    break;
                }
            }
        }
    }
    result.best_total = std::max(0.0, best);
    return result;
}

/// Reference model in which every output cuts all of its incoming movements
/// by the same factor and every input keeps FIFO. Inputs linked through a
/// shared output therefore share one factor, the largest one all of their
/// outputs can carry.
inline FlowSolution bliemer_reference(const NodeSpec& spec) {
    require_valid(spec);
    if (spec.commodities != 1) throw InvalidSpec("reference model needs a single commodity");
    const std::size_t M = spec.inputs, N = spec.outputs;

    // Connected components over inputs and outputs (outputs offset by M).
    std::vector<std::size_t> parent(M + N);
    for (std::size_t k = 0; k < parent.size(); ++k) parent[k] = k;
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j)
            if (spec.oriented_total(i, j) > 0.0) parent[find(i)] = find(M + j);

    std::vector<double> factor(M + N, 1.0);
    for (std::size_t j = 0; j < N; ++j) {
        double load = 0.0;
        for (std::size_t i = 0; i < M; ++i) load += spec.oriented_total(i, j);
        if (load <= 0.0) continue;
        auto& f = factor[find(M + j)];
        f = std::min(f, spec.supply[j] / load);
    }
    FlowSolution sol = FlowSolution::sized(M, N, 1);
    sol.iterations = 1;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) sol.f(i, j, 0) = factor[find(i)] * spec.oriented_total(i, j);
    return sol;
}

}  // namespace lnctm
