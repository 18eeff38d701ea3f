#pragma once

// Time stepping over a network of links and nodes. Each step reads only the
// previous state: hooks, per-link send/receive, per-node split assignment and
// flow solve, then one write of the next state. The per-link and per-node
// phases run on worker threads with one output slot per item, so the
// trajectory does not depend on the worker count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lnctm/assign.hpp"
#include "lnctm/common.hpp"
#include "lnctm/core.hpp"
#include "lnctm/node.hpp"

namespace lnctm {

/// Piecewise-constant time series indexed by timestep. One value means
/// constant; otherwise value t applies during step t. An empty profile means
/// "use the default" where the owner allows it.
template <class T>
struct Profile {
    std::vector<T> values;

    static Profile constant(T v) { return Profile{{std::move(v)}}; }

    bool empty() const { return values.empty(); }
    std::size_t size() const { return values.size(); }
    bool covers(std::size_t steps) const { return values.size() == 1 || values.size() >= steps; }

    const T& at(std::size_t t) const {
        if (values.empty()) throw std::out_of_range("empty profile");
        if (values.size() == 1) return values.front();
        if (t >= values.size())
            throw std::out_of_range("profile of length " + std::to_string(values.size()) + " has no step " +
                                    std::to_string(t));
        return values[t];
    }
};

struct Link {
    std::string id;
    LinkKind kind = LinkKind::Ordinary;
    Profile<FundamentalDiagram> fd;  // normalized
    double length = 0.0;             // as given in the document, for reporting
};

/// Input and output orders define the i/j indices of priorities, splits and
/// restriction coefficients.
struct Node {
    std::string id;
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> outputs;
    Profile<std::vector<double>> priority;                  // [i]; empty = input capacities
    Profile<std::vector<std::optional<double>>> split;      // [(i*N + j)*C + c]; nullopt = unassigned
    Profile<std::vector<double>> restriction;               // [(i*N + j)*N + k]; empty = full FIFO

    std::size_t split_size(std::size_t commodities) const { return inputs.size() * outputs.size() * commodities; }
};

struct Network {
    std::size_t commodities = 1;
    std::vector<Link> links;
    std::vector<Node> nodes;

    std::optional<std::size_t> find_link(const std::string& id) const {
        for (std::size_t l = 0; l < links.size(); ++l)
            if (links[l].id == id) return l;
        return std::nullopt;
    }
    std::optional<std::size_t> find_node(const std::string& id) const {
        for (std::size_t v = 0; v < nodes.size(); ++v)
            if (nodes[v].id == id) return v;
        return std::nullopt;
    }
};

/// What the node did during one step.
struct NodeRecord {
    std::vector<double> split;  // full split ratios after assignment, NodeSpec layout
    FlowSolution flow;
};

/// State at time t plus what happened during the step that ended at t.
/// At t = 0 the step records are zero and speeds are free-flow speeds.
struct SimState {
    std::size_t t = 0;
    std::vector<LinkState> links;
    std::vector<CommodityFlow> inflow;     // f_in per link
    std::vector<CommodityFlow> outflow;    // f_out per link
    std::vector<CommodityFlow> sent;       // send function per link
    std::vector<std::optional<double>> received;  // receive function per link; nullopt for origins
    std::vector<double> speed;             // per link, links per step
    std::vector<NodeRecord> nodes;
    CommodityFlow injected;                // cumulative origin inflow
    CommodityFlow exited;                  // cumulative destination outflow
};

/// Parameter changes requested by control hooks for one step.
struct ParameterOverrides {
    std::vector<double> capacity_scale;                       // per link
    std::vector<double> speed_scale;                          // per link, scales v_f and w
    std::vector<std::optional<std::vector<double>>> priority;  // per node

    static ParameterOverrides identity(const Network& net) {
        ParameterOverrides o;
        o.capacity_scale.assign(net.links.size(), 1.0);
        o.speed_scale.assign(net.links.size(), 1.0);
        o.priority.assign(net.nodes.size(), std::nullopt);
        return o;
    }
};

struct Scenario;

/// A control function. It may read the state (closed loop) or only state.t
/// (open loop) and writes nothing but the overrides it is handed.
struct ControlHook {
    std::string name;
    std::function<void(const Scenario&, const SimState&, ParameterOverrides&)> apply;
};

struct Scenario {
    Network network;
    std::vector<Profile<CommodityFlow>> demand;  // per link; only origins are non-empty
    std::vector<LinkState> initial;              // per link
    std::size_t horizon = 0;
    std::vector<ControlHook> hooks;
    double dt_seconds = 0.0;  // as given in the document, for reporting
};

struct RunOptions {
    std::size_t threads = 1;            // 0 = hardware concurrency
    std::optional<std::size_t> steps;   // overrides the scenario horizon
};

/// Metastate consistent with an initial count when the document gives none:
/// congested only above the high critical density.
inline int initial_metastate(double total_n, const FundamentalDiagram& fd) {
    return total_n > detail::high_critical(fd) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Hooks

/// Scales a link's capacity and speeds during [from, until).
inline ControlHook scale_link(std::string name, std::size_t link, double capacity_factor, double speed_factor,
                              std::size_t from, std::size_t until) {
    return {std::move(name), [=](const Scenario&, const SimState& s, ParameterOverrides& o) {
                if (s.t < from || s.t >= until) return;
                o.capacity_scale.at(link) *= capacity_factor;
                o.speed_scale.at(link) *= speed_factor;
            }};
}

/// Replaces a node's input priorities during [from, until).
inline ControlHook override_priorities(std::string name, std::size_t node, std::vector<double> priorities,
                                       std::size_t from, std::size_t until) {
    return {std::move(name), [=](const Scenario&, const SimState& s, ParameterOverrides& o) {
                if (s.t < from || s.t >= until) return;
                o.priority.at(node) = priorities;
            }};
}

/// Closed-loop meter: while the watched link holds more than `threshold`
/// vehicles, the metered link's capacity is multiplied by `factor`.
inline ControlHook density_meter(std::string name, std::size_t watched, double threshold, std::size_t metered,
                                 double factor) {
    return {std::move(name), [=](const Scenario&, const SimState& s, ParameterOverrides& o) {
                if (s.links.at(watched).total_vehicles() > threshold) o.capacity_scale.at(metered) *= factor;
            }};
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline std::string link_name(const Network& net, std::size_t l) { return "link " + net.links[l].id; }
inline std::string node_name(const Network& net, std::size_t v) { return "node " + net.nodes[v].id; }

}  // namespace detail

/// Everything that would stop a run of `steps` steps (the horizon when
/// omitted). Empty means runnable.
inline std::vector<Diagnostic> validate(const Scenario& sc, std::optional<std::size_t> steps = std::nullopt) {
    std::vector<Diagnostic> out;
    auto add = [&](std::string code, std::string subject, std::string msg) {
        out.push_back({std::move(code), std::move(subject), std::move(msg)});
    };
    const Network& net = sc.network;
    const std::size_t L = net.links.size(), C = net.commodities;
    const std::size_t T = steps.value_or(sc.horizon);
    if (C == 0) {
        add("InvalidScenario", "network", "commodity count must be positive");
        return out;
    }
    if (sc.demand.size() != L || sc.initial.size() != L) {
        add("DimensionMismatch", "scenario", "demand and initial conditions must list every link");
        return out;
    }

    std::map<std::string, int> ids;
    for (const auto& l : net.links)
        if (++ids[l.id] == 2) add("DuplicateId", "link " + l.id, "link id used more than once");
    ids.clear();
    for (const auto& v : net.nodes)
        if (++ids[v.id] == 2) add("DuplicateId", "node " + v.id, "node id used more than once");

    // Graph: count how often each link is a node output (begin) or input (end).
    std::vector<int> begins(L, 0), ends(L, 0);
    for (std::size_t v = 0; v < net.nodes.size(); ++v) {
        const Node& node = net.nodes[v];
        const std::string who = detail::node_name(net, v);
        if (node.inputs.empty() || node.outputs.empty())
            add("GraphInconsistent", who, "a node needs at least one input and one output link");
        for (std::size_t l : node.inputs) {
            if (l >= L) add("GraphInconsistent", who, "input refers to a missing link");
            else ++ends[l];
        }
        for (std::size_t l : node.outputs) {
            if (l >= L) add("GraphInconsistent", who, "output refers to a missing link");
            else ++begins[l];
        }
    }
    for (std::size_t l = 0; l < L; ++l) {
        const Link& link = net.links[l];
        const std::string who = detail::link_name(net, l);
        const int want_begin = link.kind == LinkKind::Origin ? 0 : 1;
        const int want_end = link.kind == LinkKind::Destination ? 0 : 1;
        if (begins[l] != want_begin || ends[l] != want_end)
            add("GraphInconsistent", who,
                std::string(to_string(link.kind)) + " link has " + std::to_string(begins[l]) + " begin and " +
                    std::to_string(ends[l]) + " end nodes");

        if (link.fd.empty()) add("MissingProfile", who, "no fundamental diagram");
        else if (!link.fd.covers(T)) add("ProfileTooShort", who, "fundamental diagram profile shorter than the run");
        for (const auto& fd : link.fd.values) {
            try {
                check_diagram(fd);
            } catch (const CflViolation& e) {
                add("CflViolation", who, e.what());
            } catch (const ShapeViolation& e) {
                add("ShapeViolation", who, e.what());
            } catch (const std::invalid_argument& e) {
                add("InvalidDiagram", who, e.what());
            }
        }

        const auto& d = sc.demand[l];
        if (link.kind == LinkKind::Origin) {
            if (d.empty()) add("MissingProfile", who, "origin without demand");
            else if (!d.covers(T)) add("ProfileTooShort", who, "demand profile shorter than the run");
            for (const auto& v : d.values) {
                if (v.size() != C) add("DimensionMismatch", who, "demand needs one value per commodity");
                for (double x : v)
                    if (!std::isfinite(x) || x < 0.0) add("InvalidDemand", who, "demand must be finite and nonnegative");
            }
        } else if (!d.empty()) {
            add("InvalidDemand", who, "only origin links take demand");
        }

        const LinkState& init = sc.initial[l];
        if (init.n.size() != C) add("DimensionMismatch", who, "initial state needs one count per commodity");
        for (double x : init.n)
            if (!std::isfinite(x) || x < 0.0) add("InvalidInitial", who, "initial vehicle counts must be nonnegative");
        if (init.theta != 0 && init.theta != 1) add("InvalidInitial", who, "initial metastate must be 0 or 1");
        if (!link.fd.empty() && init.total_vehicles() > link.fd.at(0).jam_density + kTolerance)
            add("InvalidInitial", who, "initial count exceeds jam density");
    }

    for (std::size_t v = 0; v < net.nodes.size(); ++v) {
        const Node& node = net.nodes[v];
        const std::string who = detail::node_name(net, v);
        const std::size_t M = node.inputs.size(), N = node.outputs.size();

        if (node.split.empty()) add("MissingProfile", who, "no split ratios");
        else if (!node.split.covers(T)) add("ProfileTooShort", who, "split ratio profile shorter than the run");
        for (const auto& split : node.split.values) {
            if (split.size() != node.split_size(C)) {
                add("DimensionMismatch", who, "split ratios need inputs x outputs x commodities entries");
                continue;
            }
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t c = 0; c < C; ++c) {
                    double known = 0.0;
                    bool unknown = false;
                    for (std::size_t j = 0; j < N; ++j) {
                        const auto& b = split[(i * N + j) * C + c];
                        if (!b) {
                            unknown = true;
                            continue;
                        }
                        if (!std::isfinite(*b) || *b < 0.0 || *b > 1.0 + kTolerance)
                            add("InvalidSplit", who, "split ratio outside [0, 1]");
                        known += *b;
                    }
                    const std::string row = who + " input " + std::to_string(i) + " commodity " + std::to_string(c);
                    if (!unknown && std::abs(known - 1.0) > 1e-9)
                        add("SplitSumViolation", row, "split ratios sum to " + std::to_string(known));
                    if (unknown && known > 1.0 + 1e-9)
                        add("SplitSumViolation", row, "known split ratios sum to " + std::to_string(known));
                }
        }

        if (!node.priority.empty() && !node.priority.covers(T))
            add("ProfileTooShort", who, "priority profile shorter than the run");
        for (const auto& p : node.priority.values) {
            if (p.size() != M) add("DimensionMismatch", who, "priorities need one value per input");
            for (double x : p)
                if (!std::isfinite(x) || x < 0.0) add("InvalidPriority", who, "priorities must be nonnegative");
        }

        if (!node.restriction.empty() && !node.restriction.covers(T))
            add("ProfileTooShort", who, "restriction profile shorter than the run");
        for (const auto& eta : node.restriction.values) {
            if (eta.size() != M * N * N) {
                add("DimensionMismatch", who, "restriction coefficients need inputs x outputs x outputs entries");
                continue;
            }
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j)
                    for (std::size_t k = 0; k < N; ++k) {
                        const double e = eta[(i * N + j) * N + k];
                        if (!std::isfinite(e) || e < 0.0 || e > 1.0)
                            add("InvalidRestriction", who, "restriction coefficient outside [0, 1]");
                        if (j == k && e != 1.0) add("InvalidRestriction", who, "restriction diagonal must be 1");
                    }
        }
    }
    return out;
}

inline void require_valid(const Scenario& sc, std::optional<std::size_t> steps = std::nullopt) {
    auto ds = validate(sc, steps);
    if (!ds.empty()) throw ValidationError(std::move(ds));
}

// ---------------------------------------------------------------------------
// Stepping

namespace detail {

/// Runs fn(k) for k in [0, count) on up to `threads` workers with contiguous
/// chunks. If several items throw, the one with the lowest index wins, so
/// failures are reported the same way for any worker count.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (count + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
        const std::size_t lo = w * chunk, hi = std::min(count, lo + chunk);
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (std::size_t k = lo; k < hi; ++k) fn(k);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Re-throws a library error with a location prefix, keeping its type.
template <class Fn>
auto with_context(const std::string& where, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const NegativeDensity& e) {
        throw NegativeDensity(where + ": " + e.what());
    } catch (const InvalidSpec& e) {
        throw InvalidSpec(where + ": " + e.what());
    } catch (const CflViolation& e) {
        throw CflViolation(where + ": " + e.what());
    } catch (const ShapeViolation& e) {
        throw ShapeViolation(where + ": " + e.what());
    } catch (const Error& e) {
        throw Error(where + ": " + e.what());
    }
}

inline FundamentalDiagram effective_diagram(const Link& link, std::size_t t, const ParameterOverrides& o,
                                            std::size_t l) {
    FundamentalDiagram fd = link.fd.at(t);
    fd.capacity *= o.capacity_scale[l];
    fd.free_flow_speed *= o.speed_scale[l];
    fd.congestion_wave_speed *= o.speed_scale[l];
    return fd;
}

}  // namespace detail

inline SimState initial_state(const Scenario& sc) {
    const Network& net = sc.network;
    const std::size_t L = net.links.size(), C = net.commodities;
    SimState s;
    s.links = sc.initial;
    s.inflow.assign(L, CommodityFlow(C, 0.0));
    s.outflow.assign(L, CommodityFlow(C, 0.0));
    s.sent.assign(L, CommodityFlow(C, 0.0));
    s.received.assign(L, std::nullopt);
    s.speed.resize(L);
    for (std::size_t l = 0; l < L; ++l) s.speed[l] = net.links[l].fd.at(0).free_flow_speed;
    s.nodes.resize(net.nodes.size());
    for (std::size_t v = 0; v < net.nodes.size(); ++v) {
        const Node& node = net.nodes[v];
        s.nodes[v].split.assign(node.split_size(C), 0.0);
        s.nodes[v].flow = FlowSolution::sized(node.inputs.size(), node.outputs.size(), C);
    }
    s.injected.assign(C, 0.0);
    s.exited.assign(C, 0.0);
    return s;
}

/// Advances one step. The scenario must have passed validate().
inline SimState step(const Scenario& sc, const SimState& prev, std::size_t threads = 1) {
    const Network& net = sc.network;
    const std::size_t L = net.links.size(), C = net.commodities, t = prev.t;

    ParameterOverrides over = ParameterOverrides::identity(net);
    for (const auto& hook : sc.hooks)
        detail::with_context("step " + std::to_string(t) + ", hook " + hook.name, [&] { hook.apply(sc, prev, over); });

    SimState next;
    next.t = t + 1;
    next.links.resize(L);
    next.inflow.assign(L, CommodityFlow(C, 0.0));
    next.outflow.assign(L, CommodityFlow(C, 0.0));
    next.sent.resize(L);
    next.received.assign(L, std::nullopt);
    next.speed.resize(L);
    next.nodes.resize(net.nodes.size());

    // Phase 1: diagrams after control, send and receive per link.
    std::vector<FundamentalDiagram> fds(L);
    detail::parallel_for(L, threads, [&](std::size_t l) {
        const Link& link = net.links[l];
        detail::with_context("step " + std::to_string(t) + ", " + detail::link_name(net, l), [&] {
            FundamentalDiagram fd = detail::effective_diagram(link, t, over, l);
            if (link.kind == LinkKind::Origin) {
                // Origins only need a usable capacity; their metastate never feeds back.
                if (fd.free_flow_speed > 1.0 + kTolerance || fd.congestion_wave_speed > 1.0 + kTolerance)
                    throw CflViolation("control pushed speeds beyond one link per step");
            } else {
                check_diagram(fd);
            }
            fds[l] = fd;
            const LinkState& st = prev.links[l];
            if (link.kind == LinkKind::Origin) next.sent[l] = send(st, fd, link.kind, sc.demand[l].at(t));
            else next.sent[l] = send(st, fd, link.kind);
            const Supply r = receive(st, fd, link.kind);
            if (!r.is_unbounded()) next.received[l] = r.value();
        });
    });

    // Phase 2: split assignment and flows per node.
    detail::parallel_for(net.nodes.size(), threads, [&](std::size_t v) {
        const Node& node = net.nodes[v];
        detail::with_context("step " + std::to_string(t) + ", " + detail::node_name(net, v), [&] {
            const std::size_t M = node.inputs.size(), N = node.outputs.size();
            NodeSpec spec = NodeSpec::sized(M, N, C);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t c = 0; c < C; ++c) spec.S(i, c) = next.sent[node.inputs[i]][c];
            for (std::size_t j = 0; j < N; ++j) {
                const auto& r = next.received[node.outputs[j]];
                if (!r) throw InvalidSpec("an origin cannot be a node output");
                spec.supply[j] = *r;
            }
            if (over.priority[v]) {
                spec.priority = *over.priority[v];
                if (spec.priority.size() != M) throw InvalidSpec("control priorities need one value per input");
            } else if (!node.priority.empty()) {
                spec.priority = node.priority.at(t);
            } else {
                std::vector<double> caps(M);
                for (std::size_t i = 0; i < M; ++i) caps[i] = fds[node.inputs[i]].capacity;
                spec.priority = tampere_priorities(caps);
            }
            if (!node.restriction.empty()) spec.restriction = node.restriction.at(t);

            const auto& partial = node.split.at(t);
            bool unknown = false;
            for (std::size_t k = 0; k < partial.size(); ++k) {
                if (partial[k]) spec.split[k] = *partial[k];
                else unknown = true;
            }
            if (unknown) {
                PartialSplitSpec ps = PartialSplitSpec::sized(static_cast<int>(M), static_cast<int>(N),
                                                              static_cast<int>(C));
                ps.demand = spec.demand;
                ps.split = partial;
                ps.priority = spec.priority;
                ps.supply = spec.supply;
                spec.split = assign_split_ratios(ps);
            }
            next.nodes[v].split = spec.split;
            next.nodes[v].flow = solve_mimo_relaxed(spec);
        });
    });

    // Boundary flows. Each link is written by its begin or end node only.
    for (std::size_t v = 0; v < net.nodes.size(); ++v) {
        const Node& node = net.nodes[v];
        const FlowSolution& f = next.nodes[v].flow;
        for (std::size_t i = 0; i < node.inputs.size(); ++i)
            for (std::size_t j = 0; j < node.outputs.size(); ++j)
                for (std::size_t c = 0; c < C; ++c) {
                    next.outflow[node.inputs[i]][c] += f.f(i, j, c);
                    next.inflow[node.outputs[j]][c] += f.f(i, j, c);
                }
    }
    for (std::size_t l = 0; l < L; ++l) {
        const Link& link = net.links[l];
        if (link.kind == LinkKind::Origin) next.inflow[l] = sc.demand[l].at(t);
        if (link.kind == LinkKind::Destination) next.outflow[l] = destination_outflow(prev.links[l], fds[l]);
    }

    // Phase 3: conservation and metastate.
    detail::parallel_for(L, threads, [&](std::size_t l) {
        detail::with_context("step " + std::to_string(t) + ", " + detail::link_name(net, l), [&] {
            next.links[l] = update_state(prev.links[l], next.inflow[l], next.outflow[l], fds[l]);
            next.speed[l] = speed(prev.links[l], next.outflow[l], fds[l]);
        });
    });

    next.injected = prev.injected;
    next.exited = prev.exited;
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t c = 0; c < C; ++c) {
            if (net.links[l].kind == LinkKind::Origin) next.injected[c] += next.inflow[l][c];
            if (net.links[l].kind == LinkKind::Destination) next.exited[c] += next.outflow[l][c];
        }
    return next;
}

/// Validates, then streams the initial state and every stepped state to
/// `on_state`.
inline void run(const Scenario& sc, const RunOptions& opt, const std::function<void(const SimState&)>& on_state) {
    const std::size_t T = opt.steps.value_or(sc.horizon);
    require_valid(sc, T);
    SimState s = initial_state(sc);
    on_state(s);
    for (std::size_t t = 0; t < T; ++t) {
        s = step(sc, s, opt.threads);
        on_state(s);
    }
}

inline std::vector<SimState> simulate(const Scenario& sc, const RunOptions& opt = {}) {
    std::vector<SimState> out;
    run(sc, opt, [&](const SimState& s) { out.push_back(s); });
    return out;
}

/// Vehicle bookkeeping between two states of one run, per commodity.
struct Audit {
    CommodityFlow initial, injected, exited, final_count;

    /// Largest |initial + injected - exited - final| relative to the
    /// vehicles that passed through, over commodities.
    double relative_residual() const {
        double worst = 0.0;
        for (std::size_t c = 0; c < initial.size(); ++c) {
            const double scale = std::max(1.0, initial[c] + injected[c]);
            worst = std::max(worst, std::abs(initial[c] + injected[c] - exited[c] - final_count[c]) / scale);
        }
        return worst;
    }
};

inline CommodityFlow network_vehicles(const SimState& s, std::size_t commodities) {
    CommodityFlow out(commodities, 0.0);
    for (const auto& l : s.links)
        for (std::size_t c = 0; c < commodities; ++c) out[c] += l.n[c];
    return out;
}

inline Audit audit(const SimState& first, const SimState& last) {
    const std::size_t C = first.injected.size();
    Audit a;
    a.initial = network_vehicles(first, C);
    a.final_count = network_vehicles(last, C);
    a.injected.resize(C);
    a.exited.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        a.injected[c] = last.injected[c] - first.injected[c];
        a.exited[c] = last.exited[c] - first.exited[c];
    }
    return a;
}

}  // namespace lnctm
