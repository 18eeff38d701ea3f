#pragma once

// Runtime assignment of undefined split ratios at a single node. Unknown
// portions of each input's split are pushed toward the outputs with the
// lowest oriented demand-to-supply ratio, keeping outputs as evenly loaded
// as possible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lnctm/common.hpp"

namespace lnctm {

/// Split ratios where some (i, j, c) entries are left for the node to decide.
/// Layouts match NodeSpec: demand[i*C + c], split[(i*N + j)*C + c].
struct PartialSplitSpec {
    int inputs = 0;
    int outputs = 0;
    int commodities = 0;
    std::vector<double> demand;
    std::vector<std::optional<double>> split;  // nullopt marks an unknown entry
    std::vector<double> priority;
    std::vector<double> supply;

    static PartialSplitSpec sized(int m, int n, int c) {
        PartialSplitSpec s;
        s.inputs = m;
        s.outputs = n;
        s.commodities = c;
        s.demand.assign(static_cast<std::size_t>(m) * c, 0.0);
        s.split.assign(static_cast<std::size_t>(m) * n * c, std::optional<double>(0.0));
        s.priority.assign(m, 1.0);
        s.supply.assign(n, 0.0);
        return s;
    }

    std::size_t split_index(int i, int j, int c) const {
        return (static_cast<std::size_t>(i) * outputs + j) * commodities + c;
    }
    double S(int i, int c) const { return demand[static_cast<std::size_t>(i) * commodities + c]; }
    const std::optional<double>& beta(int i, int j, int c) const { return split[split_index(i, j, c)]; }
    bool has_unknowns() const {
        return std::any_of(split.begin(), split.end(), [](const auto& b) { return !b.has_value(); });
    }
};

/// One pass of the assignment loop, kept for tests and debugging.
struct AssignmentStep {
    int k = 0;
    double mu_plus = 0.0;
    double mu_minus = 0.0;
    std::vector<int> candidates;  // outputs tied for the smallest least-loaded ratio
    int output = -1;              // j-
    int input = -1;               // i-
    int commodity = -1;           // c-
    bool balanced = false;        // true when the remaining share was distributed outright
    double delta = 0.0;           // increment of beta(i-, j-, c-) on the unbalanced branch
};

struct AssignmentTrace {
    std::vector<AssignmentStep> steps;
    bool hit_fallback = false;  // loop ended through a guard rather than the normal exit
};

inline std::vector<Diagnostic> validate(const PartialSplitSpec& s) {
    std::vector<Diagnostic> out;
    auto bad = [&](std::string subject, std::string msg) {
        out.push_back({"InvalidSpec", std::move(subject), std::move(msg)});
    };
    if (s.inputs < 1 || s.outputs < 1 || s.commodities < 1) {
        bad("node", "needs at least one input, one output and one commodity");
        return out;
    }
    const auto m = static_cast<std::size_t>(s.inputs), n = static_cast<std::size_t>(s.outputs),
               c = static_cast<std::size_t>(s.commodities);
    if (s.demand.size() != m * c || s.split.size() != m * n * c || s.priority.size() != m ||
        s.supply.size() != n) {
        out.push_back({"DimensionMismatch", "node", "array sizes do not match M, N, C"});
        return out;
    }
    for (double d : s.demand)
        if (!std::isfinite(d) || d < 0.0) bad("demand", "must be finite and nonnegative");
    for (double p : s.priority)
        if (!std::isfinite(p) || p < 0.0) bad("priority", "must be finite and nonnegative");
    for (double r : s.supply)
        if (!std::isfinite(r) || r < 0.0) bad("supply", "must be finite and nonnegative");
    for (int i = 0; i < s.inputs; ++i)
        for (int k = 0; k < s.commodities; ++k) {
            double known = 0.0;
            for (int j = 0; j < s.outputs; ++j) {
                const auto& b = s.beta(i, j, k);
                if (!b) continue;
                if (!std::isfinite(*b) || *b < -kTolerance || *b > 1.0 + kTolerance)
                    bad("input " + std::to_string(i), "split ratio outside [0, 1]");
                known += *b;
            }
            if (known > 1.0 + kTolerance)
                bad("input " + std::to_string(i) + " commodity " + std::to_string(k),
                    "known split ratios sum above one");
        }
    return out;
}

/// Rescales nonnegative priorities to sum to one. All-zero input stays zero.
inline std::vector<double> normalized_priorities(const std::vector<double>& p) {
    double sum = 0.0;
    for (double x : p) sum += x;
    std::vector<double> out(p.size(), 0.0);
    if (sum > 0.0)
        for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] / sum;
    return out;
}

/// Gives zero-priority inputs a small positive share so every input can
/// claim part of an output. Expects priorities summing to one; an all-zero
/// vector becomes uniform.
inline std::vector<double> regularize_priorities(const std::vector<double>& p) {
    const auto m = static_cast<double>(p.size());
    if (p.empty()) return {};
    const double zeros = static_cast<double>(std::count(p.begin(), p.end(), 0.0));
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (m - zeros) / m + zeros / (m * m);
    return out;
}

namespace detail {

inline bool same_ratio(double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace detail

/// Fills every unknown split ratio. Known entries are copied unchanged.
/// Returns the full split array in NodeSpec layout.
inline std::vector<double> assign_split_ratios(const PartialSplitSpec& spec, AssignmentTrace* trace = nullptr) {
    if (auto ds = validate(spec); !ds.empty()) throw InvalidSpec(ValidationError(ds).what());

    const int M = spec.inputs, N = spec.outputs, C = spec.commodities;
    const auto idx = [&](int i, int j, int c) { return spec.split_index(i, j, c); };
    const auto ic = [&](int i, int c) { return static_cast<std::size_t>(i) * C + c; };

    std::vector<double> beta(spec.split.size(), 0.0);  // beta~ for unknowns, fixed values otherwise
    std::vector<char> unknown(spec.split.size(), 0);
    std::vector<double> rest(static_cast<std::size_t>(M) * C, 0.0);  // beta-bar
    std::vector<int> open_count(static_cast<std::size_t>(M) * C, 0);  // |V_i^c|

    for (int i = 0; i < M; ++i)
        for (int c = 0; c < C; ++c) {
            double known = 0.0;
            for (int j = 0; j < N; ++j) {
                const auto& b = spec.beta(i, j, c);
                if (b) {
                    beta[idx(i, j, c)] = std::clamp(*b, 0.0, 1.0);
                    known += beta[idx(i, j, c)];
                } else {
                    unknown[idx(i, j, c)] = 1;
                    ++open_count[ic(i, c)];
                }
            }
            rest[ic(i, c)] = std::max(0.0, 1.0 - known);
        }

    // Cases the loop does not need: nothing left to give, a single candidate
    // output, or no demand to weigh the choice by.
    for (int i = 0; i < M; ++i)
        for (int c = 0; c < C; ++c) {
            const int count = open_count[ic(i, c)];
            if (count == 0) continue;
            const double r = rest[ic(i, c)];
            const bool trivial = r <= kTolerance || count == 1 || spec.S(i, c) <= 0.0;
            if (!trivial) continue;
            for (int j = 0; j < N; ++j) {
                if (!unknown[idx(i, j, c)]) continue;
                beta[idx(i, j, c)] = r <= kTolerance ? 0.0 : r / count;
                unknown[idx(i, j, c)] = 0;
            }
            rest[ic(i, c)] = 0.0;
            open_count[ic(i, c)] = 0;
        }

    // Static sets: inputs with an open choice toward j.
    std::vector<std::vector<int>> chooser(N);
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < M; ++i)
            for (int c = 0; c < C; ++c)
                if (unknown[idx(i, j, c)]) {
                    chooser[j].push_back(i);
                    break;
                }

    const std::vector<double> prio = regularize_priorities(normalized_priorities(spec.priority));
    std::vector<double> input_demand(M, 0.0);
    for (int i = 0; i < M; ++i)
        for (int c = 0; c < C; ++c) input_demand[i] += spec.S(i, c);

    // Spreads the remaining share of (i, c) over its still-contested outputs
    // in proportion to weight(j), or evenly if all weights vanish.
    auto distribute = [&](int i, int c, const std::vector<char>& contested, auto weight) {
        std::vector<int> targets;
        for (int j = 0; j < N; ++j)
            if (unknown[idx(i, j, c)] && contested[j]) targets.push_back(j);
        if (targets.empty())
            for (int j = 0; j < N; ++j)
                if (unknown[idx(i, j, c)]) targets.push_back(j);
        double wsum = 0.0;
        for (int j : targets) wsum += weight(j);
        for (int j : targets) {
            const double share = wsum > 0.0 ? weight(j) / wsum : 1.0 / static_cast<double>(targets.size());
            beta[idx(i, j, c)] += share * rest[ic(i, c)];
        }
        rest[ic(i, c)] = 0.0;
    };

    const int cap = 64 * (M * N * C + 1);
    for (int k = 0;; ++k) {
        // Contested sets: inputs still holding an unassigned share toward j.
        std::vector<std::vector<int>> contesting(N);
        std::vector<char> contested(N, 0);
        bool any = false;
        for (int j = 0; j < N; ++j) {
            for (int i : chooser[j])
                for (int c = 0; c < C; ++c)
                    if (unknown[idx(i, j, c)] && rest[ic(i, c)] > 0.0) {
                        contesting[j].push_back(i);
                        break;
                    }
            contested[j] = !contesting[j].empty();
            any = any || contested[j];
        }
        if (!any) break;

        // gamma and the oriented priorities built from it.
        auto gamma = [&](int i, int j, int c) {
            const double b = beta[idx(i, j, c)];
            return unknown[idx(i, j, c)] ? b + rest[ic(i, c)] / open_count[ic(i, c)] : b;
        };
        std::vector<double> oriented_prio(static_cast<std::size_t>(M) * N, 0.0);
        std::vector<double> assigned(static_cast<std::size_t>(M) * N, 0.0);  // sum_c beta~ S
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
                double g = 0.0, a = 0.0;
                for (int c = 0; c < C; ++c) {
                    g += gamma(i, j, c) * spec.S(i, c);
                    a += beta[idx(i, j, c)] * spec.S(i, c);
                }
                oriented_prio[i * N + j] = input_demand[i] > 0.0 ? prio[i] * g / input_demand[i] : 0.0;
                assigned[i * N + j] = a;
            }
        std::vector<double> prio_sum(N, 0.0);
        for (int j = 0; j < N; ++j)
            for (int i : chooser[j]) prio_sum[j] += oriented_prio[i * N + j];

        // Oriented demand-to-supply ratio; nullopt removes the movement.
        auto ratio = [&](int i, int j) -> std::optional<double> {
            const double R = spec.supply[j];
            if (R <= 0.0) return std::nullopt;
            const double a = assigned[i * N + j];
            if (a <= 0.0) return 0.0;
            const double p = oriented_prio[i * N + j];
            if (p <= 0.0) return std::nullopt;
            return a * prio_sum[j] / (p * R);
        };

        AssignmentStep step;
        step.k = k;

        double mu_plus = 0.0;
        for (int j = 0; j < N; ++j)
            for (int i : contesting[j])
                if (auto r = ratio(i, j)) mu_plus = std::max(mu_plus, *r);
        step.mu_plus = mu_plus;

        // Least-loaded outputs, judged by their least-loaded movement over the
        // static chooser set.
        std::vector<double> low(N, std::numeric_limits<double>::infinity());
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < N; ++j) {
            if (!contested[j]) continue;
            for (int i : chooser[j])
                if (auto r = ratio(i, j)) low[j] = std::min(low[j], *r);
            best = std::min(best, low[j]);
        }
        if (!std::isfinite(best) || k >= cap) {
            if (trace) trace->hit_fallback = true;
            for (int i = 0; i < M; ++i)
                for (int c = 0; c < C; ++c)
                    if (rest[ic(i, c)] > 0.0)
                        distribute(i, c, contested,
                                   [&](int j) { return oriented_prio[i * N + j] * spec.supply[j]; });
            break;
        }
        for (int j = 0; j < N; ++j)
            if (contested[j] && std::isfinite(low[j]) && detail::same_ratio(low[j], best))
                step.candidates.push_back(j);

        // Among those, the output with the smallest total assigned load per supply.
        int jm = -1;
        double jm_load = std::numeric_limits<double>::infinity();
        for (int j : step.candidates) {
            double load = 0.0;
            for (int i = 0; i < M; ++i) load += assigned[i * N + j];
            load /= spec.supply[j];
            if (jm < 0 || (load < jm_load && !detail::same_ratio(load, jm_load))) {
                jm = j;
                jm_load = load;
            }
        }
        step.output = jm;

        // Least-loaded contesting input at j-, then its smallest unassigned demand.
        double w_best = std::numeric_limits<double>::infinity();
        for (int i : contesting[jm])
            if (auto r = ratio(i, jm)) w_best = std::min(w_best, *r);
        int im = -1, cm = -1;
        double smallest = std::numeric_limits<double>::infinity();
        for (int i : contesting[jm]) {
            auto r = ratio(i, jm);
            if (!r || !detail::same_ratio(*r, w_best)) continue;
            for (int c = 0; c < C; ++c) {
                if (!unknown[idx(i, jm, c)] || rest[ic(i, c)] <= 0.0) continue;
                const double open = rest[ic(i, c)] * spec.S(i, c);
                if (open < smallest) {
                    smallest = open;
                    im = i;
                    cm = c;
                }
            }
        }
        step.input = im;
        step.commodity = cm;
        step.mu_minus = w_best;

        if (detail::same_ratio(w_best, mu_plus)) {
            step.balanced = true;
            distribute(im, cm, contested,
                       [&](int j) { return oriented_prio[im * N + j] * spec.supply[j]; });
        } else {
            const double open = rest[ic(im, cm)] * spec.S(im, cm);
            const double target = mu_plus * oriented_prio[im * N + jm] * spec.supply[jm] /
                                  (open * prio_sum[jm]) -
                                  assigned[im * N + jm] / open;
            const double delta = std::min(rest[ic(im, cm)], std::max(0.0, target));
            step.delta = delta;
            beta[idx(im, jm, cm)] += delta;
            if (delta >= rest[ic(im, cm)])
                rest[ic(im, cm)] = 0.0;
            else
                rest[ic(im, cm)] -= delta;
        }
        if (trace) trace->steps.push_back(step);
    }
    return beta;
}

}  // namespace lnctm
