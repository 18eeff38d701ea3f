#pragma once

// Node flow solvers. Every solver takes a NodeSpec (demands, split ratios,
// priorities, supplies, mutual restriction coefficients for one node and one
// timestep) and returns the input->output commodity flows.
//
// Indexing: inputs i in [0, M), outputs j in [0, N), commodities c in [0, C).
// restriction(i, j, k) is the portion of movement (i, k) affected when
// output j restricts input i.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "lnctm/common.hpp"

namespace lnctm {

struct NodeSpec {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::size_t commodities = 1;

    std::vector<double> demand;       // [i*C + c]
    std::vector<double> split;        // [(i*N + j)*C + c]
    std::vector<double> priority;     // [i]
    std::vector<double> supply;       // [j]
    std::vector<double> restriction;  // [(i*N + j)*N + k]

    /// Zero demands, zero splits, unit priorities, zero supplies, full FIFO.
    static NodeSpec sized(std::size_t m, std::size_t n, std::size_t c) {
        NodeSpec s;
        s.inputs = m;
        s.outputs = n;
        s.commodities = c;
        s.demand.assign(m * c, 0.0);
        s.split.assign(m * n * c, 0.0);
        s.priority.assign(m, 1.0);
        s.supply.assign(n, 0.0);
        s.restriction.assign(m * n * n, 1.0);
        return s;
    }

    double& S(std::size_t i, std::size_t c) { return demand[i * commodities + c]; }
    double S(std::size_t i, std::size_t c) const { return demand[i * commodities + c]; }
    double& beta(std::size_t i, std::size_t j, std::size_t c) { return split[(i * outputs + j) * commodities + c]; }
    double beta(std::size_t i, std::size_t j, std::size_t c) const {
        return split[(i * outputs + j) * commodities + c];
    }
    double& eta(std::size_t i, std::size_t j, std::size_t k) { return restriction[(i * outputs + j) * outputs + k]; }
    double eta(std::size_t i, std::size_t j, std::size_t k) const {
        return restriction[(i * outputs + j) * outputs + k];
    }

    double oriented(std::size_t i, std::size_t j, std::size_t c) const { return beta(i, j, c) * S(i, c); }

    double oriented_total(std::size_t i, std::size_t j) const {
        double s = 0.0;
        for (std::size_t c = 0; c < commodities; ++c) s += oriented(i, j, c);
        return s;
    }

    double input_demand(std::size_t i) const {
        double s = 0.0;
        for (std::size_t c = 0; c < commodities; ++c) s += S(i, c);
        return s;
    }
};

struct FlowSolution {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::size_t commodities = 1;
    std::vector<double> flow;  // [(i*N + j)*C + c]
    int iterations = 0;

    static FlowSolution sized(std::size_t m, std::size_t n, std::size_t c) {
        FlowSolution s;
        s.inputs = m;
        s.outputs = n;
        s.commodities = c;
        s.flow.assign(m * n * c, 0.0);
        return s;
    }

    double& f(std::size_t i, std::size_t j, std::size_t c) { return flow[(i * outputs + j) * commodities + c]; }
    double f(std::size_t i, std::size_t j, std::size_t c) const { return flow[(i * outputs + j) * commodities + c]; }

    double movement_total(std::size_t i, std::size_t j) const {
        double s = 0.0;
        for (std::size_t c = 0; c < commodities; ++c) s += f(i, j, c);
        return s;
    }

    double input_total(std::size_t i) const {
        double s = 0.0;
        for (std::size_t j = 0; j < outputs; ++j) s += movement_total(i, j);
        return s;
    }

    double output_total(std::size_t j) const {
        double s = 0.0;
        for (std::size_t i = 0; i < inputs; ++i) s += movement_total(i, j);
        return s;
    }

    double total() const {
        double s = 0.0;
        for (double x : flow) s += x;
        return s;
    }
};

/// Per-iteration record of the iterative solvers, for tests and debugging.
struct SolverIteration {
    int k = 0;
    std::size_t restricting_output = 0;  // j*
    bool free_flow_round = false;        // true when some inputs were fully served
    std::vector<double> a;               // per output; NaN for outputs already processed
    std::vector<double> working_demand;  // [i*N + j], totals at the start of the iteration
};

struct SolverTrace {
    std::vector<SolverIteration> iterations;
};

enum class NodeModel { Miso, MimoFifo, SimoRelaxed, MimoRelaxed };

inline std::string_view to_string(NodeModel m) {
    switch (m) {
        case NodeModel::Miso: return "miso";
        case NodeModel::MimoFifo: return "mimo-fifo";
        case NodeModel::SimoRelaxed: return "simo-relaxed";
        case NodeModel::MimoRelaxed: return "mimo-relaxed";
    }
    return "?";
}

inline std::vector<Diagnostic> validate(const NodeSpec& s) {
    std::vector<Diagnostic> out;
    auto add = [&](std::string code, std::string subject, std::string msg) {
        out.push_back({std::move(code), std::move(subject), std::move(msg)});
    };
    const std::size_t M = s.inputs, N = s.outputs, C = s.commodities;
    if (C == 0) add("InvalidSpec", "node", "commodity count must be positive");
    if (s.demand.size() != M * C || s.split.size() != M * N * C || s.priority.size() != M ||
        s.supply.size() != N || s.restriction.size() != M * N * N) {
        add("DimensionMismatch", "node", "array sizes do not match M, N, C");
        return out;
    }
    auto bad = [](double x) { return !std::isfinite(x) || x < 0.0; };
    for (std::size_t i = 0; i < M; ++i) {
        const std::string who = "input " + std::to_string(i);
        if (bad(s.priority[i])) add("InvalidSpec", who, "priority must be finite and nonnegative");
        for (std::size_t c = 0; c < C; ++c) {
            if (bad(s.S(i, c))) add("InvalidSpec", who, "demand must be finite and nonnegative");
            double sum = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                const double b = s.beta(i, j, c);
                if (bad(b) || b > 1.0 + kTolerance) add("InvalidSpec", who, "split ratio outside [0, 1]");
                sum += b;
            }
            if (s.S(i, c) > 0.0 && std::abs(sum - 1.0) > 1e-9)
                add("SplitSumViolation", who + " commodity " + std::to_string(c),
                    "split ratios sum to " + std::to_string(sum));
        }
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t k = 0; k < N; ++k) {
                const double e = s.eta(i, j, k);
                if (bad(e) || e > 1.0) add("InvalidSpec", who, "restriction coefficient outside [0, 1]");
                if (j == k && e != 1.0) add("InvalidSpec", who, "restriction diagonal must be 1");
            }
    }
    for (std::size_t j = 0; j < N; ++j)
        if (bad(s.supply[j])) add("InvalidSpec", "output " + std::to_string(j), "supply must be finite and nonnegative");
    return out;
}

inline void require_valid(const NodeSpec& s) {
    auto ds = validate(s);
    if (ds.empty()) return;
    std::string msg = "invalid node spec";
    for (const auto& d : ds) msg += "; " + d.to_string();
    throw InvalidSpec(msg);
}

/// Priorities equal to input capacities reproduce the Tampere et al. model.
inline std::vector<double> tampere_priorities(const std::vector<double>& capacities) { return capacities; }

namespace detail {

inline bool within(double lhs, double rhs) { return lhs <= rhs + kTolerance * std::max(1.0, std::abs(rhs)); }

// Index of the smallest finite entry over `mask`, smallest index on ties.
inline std::size_t argmin_masked(const std::vector<double>& v, const std::vector<bool>& mask) {
    std::size_t best = v.size();
    for (std::size_t j = 0; j < v.size(); ++j) {
        if (!mask[j] || !std::isfinite(v[j])) continue;
        if (best == v.size() || v[j] < v[best] - kTolerance * std::max(1.0, std::abs(v[best]))) best = j;
    }
    return best;
}

// Zero-priority substitution: if no active input has positive priority,
// all active inputs get equal priority.
inline std::vector<double> effective_priorities(const std::vector<double>& p, const std::vector<bool>& active) {
    std::vector<double> out(p.size(), 0.0);
    bool any_positive = false;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!active[i]) continue;
        ++count;
        if (p[i] > 0.0) any_positive = true;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!active[i]) continue;
        out[i] = any_positive ? p[i] : 1.0 / static_cast<double>(count);
    }
    return out;
}

}  // namespace detail

/// Multiple inputs, one output. Literal form of the single-output algorithm;
/// the general solver reduces to it when N = 1.
inline FlowSolution solve_miso(const NodeSpec& spec) {
    require_valid(spec);
    if (spec.outputs != 1) throw InvalidSpec("solve_miso needs exactly one output");
    const std::size_t M = spec.inputs, C = spec.commodities;
    FlowSolution sol = FlowSolution::sized(M, 1, C);

    std::vector<double> demand(M);
    for (std::size_t i = 0; i < M; ++i) demand[i] = spec.oriented_total(i, 0);

    std::vector<bool> unprocessed(M, true);
    std::size_t remaining = M;
    double supply = spec.supply[0];
    while (remaining > 0) {
        ++sol.iterations;
        const auto p = detail::effective_priorities(spec.priority, unprocessed);
        double psum = 0.0;
        for (std::size_t i = 0; i < M; ++i)
            if (unprocessed[i]) psum += p[i];

        std::vector<std::size_t> served;
        for (std::size_t i = 0; i < M; ++i)
            if (unprocessed[i] && detail::within(demand[i], p[i] * supply / psum)) served.push_back(i);

        if (!served.empty()) {
            for (std::size_t i : served) {
                for (std::size_t c = 0; c < C; ++c) sol.f(i, 0, c) = spec.oriented(i, 0, c);
                supply = std::max(0.0, supply - demand[i]);
                unprocessed[i] = false;
                --remaining;
            }
            continue;
        }
        for (std::size_t i = 0; i < M; ++i) {
            if (!unprocessed[i]) continue;
            const double share = p[i] / psum * supply;
            for (std::size_t c = 0; c < C; ++c) sol.f(i, 0, c) = spec.oriented(i, 0, c) * share / demand[i];
        }
        break;
    }
    return sol;
}

/// Multiple inputs and outputs under full FIFO. Kept as an independent
/// reference path for the general solver.
inline FlowSolution solve_mimo_fifo(const NodeSpec& spec, SolverTrace* trace = nullptr) {
    require_valid(spec);
    const std::size_t M = spec.inputs, N = spec.outputs, C = spec.commodities;
    FlowSolution sol = FlowSolution::sized(M, N, C);

    std::vector<double> oriented(M * N), input_demand(M);
    std::vector<bool> in_set(M * N, false);  // i in U_j
    for (std::size_t i = 0; i < M; ++i) {
        input_demand[i] = spec.input_demand(i);
        for (std::size_t j = 0; j < N; ++j) {
            oriented[i * N + j] = spec.oriented_total(i, j);
            in_set[i * N + j] = oriented[i * N + j] > 0.0;
        }
    }
    std::vector<double> supply = spec.supply;

    for (int k = 0;; ++k) {
        std::vector<bool> open(N, false), active(M, false);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
                if (in_set[i * N + j]) open[j] = active[i] = true;
        if (std::none_of(open.begin(), open.end(), [](bool b) { return b; })) break;
        ++sol.iterations;

        const auto p = detail::effective_priorities(spec.priority, active);
        std::vector<double> a(N, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t j = 0; j < N; ++j) {
            if (!open[j]) continue;
            double psum = 0.0;
            for (std::size_t i = 0; i < M; ++i)
                if (in_set[i * N + j]) psum += p[i] * oriented[i * N + j] / input_demand[i];
            a[j] = psum > 0.0 ? supply[j] / psum : std::numeric_limits<double>::infinity();
        }
        const std::size_t js = detail::argmin_masked(a, open);
        const double as = a[js];

        if (trace) trace->iterations.push_back({k, js, false, a, oriented});

        std::vector<std::size_t> served;
        for (std::size_t i = 0; i < M; ++i)
            if (in_set[i * N + js] && detail::within(input_demand[i], p[i] * as)) served.push_back(i);

        if (!served.empty()) {
            if (trace) trace->iterations.back().free_flow_round = true;
            for (std::size_t i : served)
                for (std::size_t j = 0; j < N; ++j) {
                    if (!in_set[i * N + j]) continue;
                    for (std::size_t c = 0; c < C; ++c) sol.f(i, j, c) = spec.oriented(i, j, c);
                    supply[j] = std::max(0.0, supply[j] - oriented[i * N + j]);
                    in_set[i * N + j] = false;
                }
            continue;
        }
        std::vector<std::size_t> restricted;
        for (std::size_t i = 0; i < M; ++i)
            if (in_set[i * N + js]) restricted.push_back(i);
        for (std::size_t i : restricted) {
            const double ratio = p[i] * as / input_demand[i];
            for (std::size_t j = 0; j < N; ++j) {
                if (!in_set[i * N + j]) continue;
                for (std::size_t c = 0; c < C; ++c) sol.f(i, j, c) = spec.oriented(i, j, c) * ratio;
                supply[j] = std::max(0.0, supply[j] - oriented[i * N + j] * ratio);
                in_set[i * N + j] = false;
            }
        }
    }
    return sol;
}

/// One input, many outputs, relaxed FIFO, closed form.
inline FlowSolution solve_simo_relaxed(const NodeSpec& spec) {
    require_valid(spec);
    if (spec.inputs != 1) throw InvalidSpec("solve_simo_relaxed needs exactly one input");
    const std::size_t N = spec.outputs, C = spec.commodities;
    FlowSolution sol = FlowSolution::sized(1, N, C);
    sol.iterations = 1;

    std::vector<double> oriented(N), reduction(N, 1.0);
    for (std::size_t j = 0; j < N; ++j) {
        oriented[j] = spec.oriented_total(0, j);
        if (oriented[j] > 0.0) reduction[j] = std::min(1.0, spec.supply[j] / oriented[j]);
    }
    for (std::size_t j = 0; j < N; ++j) {
        if (oriented[j] <= 0.0) continue;
        double flow = reduction[j] * oriented[j];
        for (std::size_t jp = 0; jp < N; ++jp) {
            if (jp == j) continue;
            const double e = spec.eta(0, jp, j);
            flow = std::min(flow, (1.0 - e) * oriented[j] + e * reduction[jp] * oriented[j]);
        }
        for (std::size_t c = 0; c < C; ++c) sol.f(0, j, c) = spec.oriented(0, j, c) * flow / oriented[j];
    }
    return sol;
}

/// General solver: many inputs and outputs, priorities, relaxed FIFO.
inline FlowSolution solve_mimo_relaxed(const NodeSpec& spec, SolverTrace* trace = nullptr) {
    require_valid(spec);
    const std::size_t M = spec.inputs, N = spec.outputs, C = spec.commodities;
    FlowSolution sol = FlowSolution::sized(M, N, C);

    // Working oriented demand per commodity; shrinks when a restriction
    // elsewhere relaxes into movement (i, j).
    std::vector<double> work(M * N * C), work_total(M * N, 0.0), original_total(M * N);
    std::vector<bool> in_set(M * N, false);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            for (std::size_t c = 0; c < C; ++c) {
                work[(i * N + j) * C + c] = spec.oriented(i, j, c);
                work_total[i * N + j] += work[(i * N + j) * C + c];
            }
            original_total[i * N + j] = work_total[i * N + j];
            in_set[i * N + j] = work_total[i * N + j] > 0.0;
        }
    std::vector<double> supply = spec.supply;

    auto assign = [&](std::size_t i, std::size_t j, double scale) {
        double moved = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            sol.f(i, j, c) = work[(i * N + j) * C + c] * scale;
            moved += sol.f(i, j, c);
        }
        return moved;
    };

    for (int k = 0;; ++k) {
        std::vector<bool> open(N, false), active(M, false);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
                if (in_set[i * N + j]) open[j] = active[i] = true;
        if (std::none_of(open.begin(), open.end(), [](bool b) { return b; })) break;
        ++sol.iterations;

        // Remaining demand of each input over its unassigned movements.
        std::vector<double> remaining(M, 0.0);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
                if (in_set[i * N + j]) remaining[i] += work_total[i * N + j];

        const auto p = detail::effective_priorities(spec.priority, active);
        auto oriented_priority = [&](std::size_t i, std::size_t j) {
            return remaining[i] > 0.0 ? p[i] * work_total[i * N + j] / remaining[i] : 0.0;
        };

        std::vector<double> a(N, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t j = 0; j < N; ++j) {
            if (!open[j]) continue;
            double psum = 0.0;
            for (std::size_t i = 0; i < M; ++i)
                if (in_set[i * N + j]) psum += oriented_priority(i, j);
            a[j] = psum > 0.0 ? supply[j] / psum : std::numeric_limits<double>::infinity();
        }
        const std::size_t js = detail::argmin_masked(a, open);
        const double as = a[js];

        if (trace) trace->iterations.push_back({k, js, false, a, work_total});

        std::vector<std::size_t> served;
        for (std::size_t i = 0; i < M; ++i)
            if (in_set[i * N + js] && detail::within(remaining[i], p[i] * as)) served.push_back(i);

        if (!served.empty()) {
            if (trace) trace->iterations.back().free_flow_round = true;
            for (std::size_t i : served)
                for (std::size_t j = 0; j < N; ++j) {
                    if (!in_set[i * N + j]) continue;
                    supply[j] = std::max(0.0, supply[j] - assign(i, j, 1.0));
                    in_set[i * N + j] = false;
                }
            continue;
        }

        // Every input on j* is supply-restricted. Flows are computed from the
        // iteration-start quantities, then supplies and sets are updated.
        std::vector<double> taken(N, 0.0);
        std::vector<bool> next_set = in_set;
        for (std::size_t i = 0; i < M; ++i) {
            if (!in_set[i * N + js]) continue;
            // p_i * a_j* / remaining_i: the common scale applied to every
            // movement that follows j* under full FIFO.
            const double scale = p[i] * as / remaining[i];
            taken[js] += assign(i, js, scale);
            next_set[i * N + js] = false;
            const double restricted_ratio = sol.movement_total(i, js) / original_total[i * N + js];

            for (std::size_t j = 0; j < N; ++j) {
                if (j == js || !in_set[i * N + j]) continue;
                const double e = spec.eta(i, js, j);
                if (e >= 1.0) {
                    taken[j] += assign(i, j, scale);
                    next_set[i * N + j] = false;
                    continue;
                }
                const double cap = (1.0 - e) * original_total[i * N + j] + e * restricted_ratio * original_total[i * N + j];
                const double current = work_total[i * N + j];
                if (cap < current) {
                    const double shrink = cap / current;
                    for (std::size_t c = 0; c < C; ++c) work[(i * N + j) * C + c] *= shrink;
                    work_total[i * N + j] = cap;
                }
            }
        }
        for (std::size_t j = 0; j < N; ++j) supply[j] = std::max(0.0, supply[j] - taken[j]);
        in_set = std::move(next_set);
    }
    return sol;
}

inline FlowSolution solve(const NodeSpec& spec, NodeModel model) {
    switch (model) {
        case NodeModel::Miso: return solve_miso(spec);
        case NodeModel::MimoFifo: return solve_mimo_fifo(spec);
        case NodeModel::SimoRelaxed: return solve_simo_relaxed(spec);
        case NodeModel::MimoRelaxed: return solve_mimo_relaxed(spec);
    }
    throw InvalidSpec("unknown node model");
}

}  // namespace lnctm
