// Randomized properties of the node solvers. Generators are hand-rolled and
// seeded, so every failure reproduces.

#include <gtest/gtest.h>

#include <random>

#include "instances.hpp"
#include "lnctm/assign.hpp"
#include "lnctm/node.hpp"
#include "lnctm/oracle.hpp"

using namespace lnctm;
using namespace lnctm::testing;

namespace {

double max_abs_diff(const FlowSolution& a, const FlowSolution& b) {
    double worst = 0;
    for (std::size_t k = 0; k < a.flow.size(); ++k) worst = std::max(worst, std::abs(a.flow[k] - b.flow[k]));
    return worst;
}

// Some output both restricts and is restricted by another output.
bool chained(const NodeSpec& s) {
    const std::size_t N = s.outputs;
    for (std::size_t i = 0; i < s.inputs; ++i)
        for (std::size_t a = 0; a < N; ++a)
            for (std::size_t b = 0; b < N; ++b)
                for (std::size_t c = 0; c < N; ++c)
                    if (a != b && b != c && a != c && s.eta(i, a, b) > 0 && s.eta(i, b, c) > 0) return true;
    return false;
}

bool holds(const ConstraintReport& r, Constraint c) { return r[c].satisfied; }

}  // namespace

TEST(Equivalence, SingleOutputMatchesMerge) {
    std::mt19937_64 rng(101);
    RandomNodeOptions o;
    o.max_outputs = 1;
    for (int t = 0; t < 1000; ++t) {
        const NodeSpec s = random_node(rng, o);
        ASSERT_LE(max_abs_diff(solve_miso(s), solve_mimo_relaxed(s)), 1e-9) << "instance " << t;
    }
}

TEST(Equivalence, FullRestrictionMatchesFifo) {
    std::mt19937_64 rng(102);
    RandomNodeOptions o;
    o.random_restrictions = false;
    for (int t = 0; t < 1000; ++t) {
        const NodeSpec s = random_node(rng, o);
        ASSERT_LE(max_abs_diff(solve_mimo_fifo(s), solve_mimo_relaxed(s)), 1e-9) << "instance " << t;
    }
}

TEST(Equivalence, SingleInputMatchesDivergeWithoutChains) {
    // With chained restrictions the closed form sees one hop only; see
    // Simo.ChainedRestrictionDiffersFromGeneralSolver.
    std::mt19937_64 rng(103);
    RandomNodeOptions o;
    o.max_inputs = 1;
    int compared = 0;
    for (int t = 0; t < 2000; ++t) {
        const NodeSpec s = random_node(rng, o);
        if (chained(s)) continue;
        ++compared;
        ASSERT_LE(max_abs_diff(solve_simo_relaxed(s), solve_mimo_relaxed(s)), 1e-9) << "instance " << t;
    }
    EXPECT_GT(compared, 500);
}

TEST(Feasibility, LinearConstraintsAlwaysHold) {
    std::mt19937_64 rng(104);
    for (int t = 0; t < 5000; ++t) {
        const NodeSpec s = random_node(rng, {});
        const auto r = check_solution(s, solve_mimo_relaxed(s), 1e-6);
        ASSERT_TRUE(holds(r, Constraint::Nonnegativity) && holds(r, Constraint::Demand) &&
                    holds(r, Constraint::Supply) && holds(r, Constraint::Proportionality))
            << "instance " << t << ": " << r.summary();
    }
}

TEST(Feasibility, FullFifoSatisfiesEveryConstraint) {
    std::mt19937_64 rng(105);
    RandomNodeOptions o;
    o.random_restrictions = false;
    for (int t = 0; t < 3000; ++t) {
        const NodeSpec s = random_node(rng, o);
        const auto r = check_solution(s, solve_mimo_relaxed(s), 1e-6);
        ASSERT_TRUE(r.satisfied()) << "instance " << t << ": " << r.summary();
    }
}

TEST(Feasibility, NoRestrictionAcrossOutputsSatisfiesEveryConstraint) {
    // eta = identity: each movement stands alone.
    std::mt19937_64 rng(106);
    for (int t = 0; t < 3000; ++t) {
        NodeSpec s = random_node(rng, {});
        const std::size_t N = s.outputs;
        for (std::size_t i = 0; i < s.inputs; ++i)
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t k = 0; k < N; ++k) s.eta(i, j, k) = j == k ? 1.0 : 0.0;
        const auto r = check_solution(s, solve_mimo_relaxed(s), 1e-6);
        EXPECT_TRUE(holds(r, Constraint::RelaxedFifo)) << "instance " << t << ": " << r.summary();
    }
}

TEST(Feasibility, IterationCountBound) {
    std::mt19937_64 rng(107);
    for (int t = 0; t < 5000; ++t) {
        const NodeSpec s = random_node(rng, {});
        ASSERT_LE(solve_mimo_relaxed(s).iterations - 1, static_cast<int>(s.inputs + s.outputs) - 2) << t;
    }
}

TEST(Optimality, SingleOutputOrInputNeverTrailsTheGrid) {
    std::mt19937_64 rng(108);
    for (int t = 0; t < 300; ++t) {
        RandomNodeOptions o;
        o.max_inputs = t % 2 ? 1 : 2;
        o.max_outputs = t % 2 ? 3 : 1;
        o.max_commodities = 1;
        const NodeSpec s = random_node(rng, o);
        const auto g = grid_optimal_flow(s, 50);
        EXPECT_GE(solve_mimo_relaxed(s).total(), g.best_total * 0.99 - 1e-9) << "instance " << t;
    }
}

TEST(Optimality, PriorityConditionAtAnUncontestedOutputAdmitsMoreFlow) {
    // With several inputs and outputs the priority condition can be met at
    // an output the input does not compete for. Here input 1 gets nothing at
    // the bottleneck A, yet qualifies through B, and input 0 (fully FIFO)
    // carries the freed supply on to B as well: 300 against the solver's 250.
    NodeSpec s = NodeSpec::sized(2, 2, 1);
    s.demand = {200, 200};
    s.split = {0.5, 0.5, 0.5, 0.5};
    s.priority = {1, 1};
    s.supply = {100, 200};
    s.restriction = {1, 1, 1, 1,   // input 0: full FIFO
                     1, 0, 0, 1};  // input 1: movements independent
    const auto ours = solve_mimo_relaxed(s);
    EXPECT_NEAR(ours.f(0, 0, 0), 50, 1e-9);
    EXPECT_NEAR(ours.f(1, 0, 0), 50, 1e-9);
    EXPECT_NEAR(ours.f(0, 1, 0), 50, 1e-9);
    EXPECT_NEAR(ours.f(1, 1, 0), 100, 1e-9);
    EXPECT_TRUE(check_solution(s, ours, 1e-9).satisfied());

    FlowSolution other = FlowSolution::sized(2, 2, 1);
    other.flow = {100, 100, 0, 100};
    EXPECT_TRUE(check_solution(s, other, 1e-9).satisfied()) << check_solution(s, other, 1e-9).summary();
    EXPECT_DOUBLE_EQ(other.total() - ours.total(), 50);
}

TEST(Invariance, DemandAboveFlowCanBeRaisedToCapacity) {
    // Raising the demand of an input that does not get all of it leaves
    // every flow unchanged.
    std::mt19937_64 rng(109);
    RandomNodeOptions o;
    o.random_restrictions = false;
    o.max_commodities = 1;
    int restricted = 0;
    for (int t = 0; t < 1000; ++t) {
        const NodeSpec s = random_node(rng, o);
        const auto f = solve_mimo_relaxed(s);
        for (std::size_t i = 0; i < s.inputs; ++i) {
            if (f.input_total(i) >= s.input_demand(i) * (1 - 1e-9)) continue;
            ++restricted;
            NodeSpec raised = s;
            raised.demand[i] *= 1.5;
            const auto g = solve_mimo_relaxed(raised);
            EXPECT_LE(max_abs_diff(f, g), 1e-6 * std::max(1.0, f.total())) << "instance " << t << " input " << i;
        }
    }
    EXPECT_GT(restricted, 100);
}

TEST(Assignment, FeedsTheSolverAValidNode) {
    std::mt19937_64 rng(110);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 1000; ++t) {
        const NodeSpec full = random_node(rng, {});
        PartialSplitSpec p = PartialSplitSpec::sized(static_cast<int>(full.inputs), static_cast<int>(full.outputs),
                                                     static_cast<int>(full.commodities));
        p.demand = full.demand;
        p.priority = full.priority;
        p.supply = full.supply;
        for (std::size_t k = 0; k < full.split.size(); ++k)
            p.split[k] = u(rng) < 0.4 ? std::nullopt : std::optional<double>(full.split[k]);
        // Known entries come from a stochastic row, so their sum stays at most one.
        ASSERT_TRUE(validate(p).empty());
        NodeSpec filled = full;
        filled.split = assign_split_ratios(p);
        ASSERT_TRUE(validate(filled).empty()) << "instance " << t;
        const auto r = check_solution(filled, solve_mimo_relaxed(filled), 1e-6);
        EXPECT_TRUE(holds(r, Constraint::Supply) && holds(r, Constraint::Demand)) << r.summary();
    }
}
