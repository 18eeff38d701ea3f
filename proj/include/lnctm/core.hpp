#pragma once

// Single-link dynamics of the link-node cell transmission model: normalized
// fundamental diagrams, the congestion metastate, send/receive functions and
// the conservation update.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lnctm/common.hpp"

namespace lnctm {

/// Per-commodity vehicle counts or flows (vehicles, or vehicles per timestep).
using CommodityFlow = std::vector<double>;

inline double total(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

/// Fundamental diagram in normalized units: capacity in vehicles per step,
/// speeds in links per step, jam density in vehicles.
struct FundamentalDiagram {
    double capacity = 0.0;
    double free_flow_speed = 0.0;
    double congestion_wave_speed = 0.0;
    double jam_density = 0.0;

    bool operator==(const FundamentalDiagram&) const = default;
};

enum class LinkKind { Ordinary, Origin, Destination };

inline const char* to_string(LinkKind k) {
    switch (k) {
        case LinkKind::Ordinary: return "ordinary";
        case LinkKind::Origin: return "origin";
        case LinkKind::Destination: return "destination";
    }
    return "?";
}

struct LinkState {
    CommodityFlow n;  // vehicles per commodity
    int theta = 0;    // congestion metastate, 0 or 1

    double total_vehicles() const { return total(n); }
    bool operator==(const LinkState&) const = default;
};

/// Receive capacity of a link. Origins accept anything; this is kept as an
/// explicit state rather than an infinite double so it cannot leak into
/// node arithmetic.
class Supply {
public:
    static Supply unbounded() { return Supply(true, 0.0); }
    static Supply finite(double v) { return Supply(false, v); }

    bool is_unbounded() const { return unbounded_; }

    double value() const {
        if (unbounded_) throw std::logic_error("value() on unbounded supply");
        return value_;
    }

    bool operator==(const Supply&) const = default;

private:
    Supply(bool u, double v) : unbounded_(u), value_(v) {}

    bool unbounded_;
    double value_;
};

struct CriticalDensities {
    double low;   // n-: below or at this total the link is free flowing
    double high;  // n+: above this total the link is congested
};

namespace detail {

inline double low_critical(const FundamentalDiagram& fd) {
    const double denom = fd.free_flow_speed + fd.congestion_wave_speed;
    return denom > 0.0 ? fd.congestion_wave_speed * fd.jam_density / denom : 0.0;
}

inline double high_critical(const FundamentalDiagram& fd) {
    return fd.free_flow_speed > 0.0 ? fd.capacity / fd.free_flow_speed
                                    : std::numeric_limits<double>::infinity();
}

// Shared by ordinary/destination send and destination outflow.
inline CommodityFlow scaled_free_flow(const LinkState& s, const FundamentalDiagram& fd) {
    CommodityFlow out(s.n.size(), 0.0);
    const double sum = s.total_vehicles();
    const double potential = fd.free_flow_speed * sum;
    if (sum <= 0.0 || potential <= 0.0) return out;
    const double scale = std::min(1.0, fd.capacity / potential);
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = fd.free_flow_speed * s.n[c] * scale;
    return out;
}

}  // namespace detail

/// Throws CflViolation or ShapeViolation for diagrams the model cannot run.
inline void check_diagram(const FundamentalDiagram& fd) {
    for (double x : {fd.capacity, fd.free_flow_speed, fd.congestion_wave_speed, fd.jam_density})
        if (!std::isfinite(x) || x < 0.0)
            throw std::invalid_argument("fundamental diagram parameters must be finite and nonnegative");
    if (fd.free_flow_speed > 1.0 + kTolerance)
        throw CflViolation("free-flow speed " + std::to_string(fd.free_flow_speed) +
                           " exceeds one link per step");
    if (fd.congestion_wave_speed > 1.0 + kTolerance)
        throw CflViolation("congestion wave speed " + std::to_string(fd.congestion_wave_speed) +
                           " exceeds one link per step");
    if (detail::low_critical(fd) > detail::high_critical(fd) + kTolerance)
        throw ShapeViolation("low critical density exceeds high critical density");
}

/// Converts conventional units to per-step quantities. Speeds and capacity
/// must share the time unit of dt; jam density and speeds must share the
/// distance unit of link_length.
inline FundamentalDiagram normalize(double raw_capacity, double raw_free_flow_speed,
                                    double raw_wave_speed, double raw_jam_density,
                                    double link_length, double dt) {
    for (double x : {raw_capacity, raw_free_flow_speed, raw_wave_speed, raw_jam_density, link_length, dt})
        if (!std::isfinite(x) || x < 0.0)
            throw std::invalid_argument("normalize: inputs must be finite and nonnegative");
    if (link_length <= 0.0) throw std::invalid_argument("normalize: link length must be positive");
    if (dt <= 0.0) throw std::invalid_argument("normalize: dt must be positive");

    FundamentalDiagram fd;
    fd.capacity = raw_capacity * dt;
    fd.free_flow_speed = raw_free_flow_speed * dt / link_length;
    fd.congestion_wave_speed = raw_wave_speed * dt / link_length;
    fd.jam_density = raw_jam_density * link_length;
    check_diagram(fd);
    return fd;
}

inline CriticalDensities critical_densities(const FundamentalDiagram& fd) {
    if (fd.free_flow_speed <= 0.0) throw DegenerateDiagram("critical densities need a positive free-flow speed");
    return {detail::low_critical(fd), detail::high_critical(fd)};
}

/// Send function. Origins pass their exogenous demand through the capacity
/// limit; other links discharge at free-flow speed up to capacity.
inline CommodityFlow send(const LinkState& state, const FundamentalDiagram& fd, LinkKind kind,
                          const std::optional<CommodityFlow>& demand = std::nullopt) {
    if (kind != LinkKind::Origin) return detail::scaled_free_flow(state, fd);

    if (!demand) throw std::invalid_argument("send: origin links need a demand vector");
    CommodityFlow out(demand->size(), 0.0);
    const double sum = total(*demand);
    if (sum <= 0.0) return out;
    const double scale = std::min(1.0, fd.capacity / sum);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = (*demand)[c] * scale;
    return out;
}

/// Receive function. A link that somehow holds more than its jam density
/// while congested accepts nothing instead of reporting negative supply.
inline Supply receive(const LinkState& state, const FundamentalDiagram& fd, LinkKind kind) {
    if (kind == LinkKind::Origin) return Supply::unbounded();
    if (state.theta == 0) return Supply::finite(fd.capacity);
    const double gap = fd.jam_density - state.total_vehicles();
    return Supply::finite(std::max(0.0, fd.congestion_wave_speed * gap));
}

inline int update_metastate(int prev_theta, double total_n, const FundamentalDiagram& fd) {
    if (total_n <= detail::low_critical(fd)) return 0;
    if (total_n > detail::high_critical(fd)) return 1;
    return prev_theta;
}

inline LinkState update_state(const LinkState& state, std::span<const double> inflow,
                              std::span<const double> outflow, const FundamentalDiagram& fd) {
    if (inflow.size() != state.n.size() || outflow.size() != state.n.size())
        throw DimensionMismatch("update_state: commodity count mismatch");
    LinkState next;
    next.n.resize(state.n.size());
    for (std::size_t c = 0; c < state.n.size(); ++c) {
        const double v = state.n[c] + inflow[c] - outflow[c];
        if (v < -kTolerance)
            throw NegativeDensity("commodity " + std::to_string(c) + " would hold " + std::to_string(v) +
                                  " vehicles");
        next.n[c] = std::max(0.0, v);
    }
    next.theta = update_metastate(state.theta, next.total_vehicles(), fd);
    return next;
}

inline CommodityFlow destination_outflow(const LinkState& state, const FundamentalDiagram& fd) {
    return detail::scaled_free_flow(state, fd);
}

/// Dimensionless speed (links per step), v_f for an empty link.
inline double speed(const LinkState& state, std::span<const double> total_outflow,
                    const FundamentalDiagram& fd) {
    const double n = state.total_vehicles();
    if (n <= 0.0) return fd.free_flow_speed;
    return std::clamp(total(total_outflow) / n, 0.0, fd.free_flow_speed);
}

}  // namespace lnctm
