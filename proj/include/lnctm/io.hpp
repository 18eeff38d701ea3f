#pragma once

// Scenario and node-instance documents (JSON), results tables (CSV) and
// solution documents (JSON).
//
// Documents use conventional units: veh/h, mi/h, veh/mi, miles, and dt in
// seconds. Loading normalizes everything to per-step quantities.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lnctm/assign.hpp"
#include "lnctm/common.hpp"
#include "lnctm/core.hpp"
#include "lnctm/engine.hpp"
#include "lnctm/node.hpp"
#include "lnctm/oracle.hpp"

namespace lnctm::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kUnassigned = "unassigned";

/// A scenario plus what is needed to write it back out.
struct ScenarioDocument {
    Scenario scenario;
    std::vector<std::string> commodity_names;
    json controls = json::array();  // control hooks as declared
};

// ---------------------------------------------------------------------------
// Field access with path-qualified errors

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
    throw ParseError(path + ": " + msg);
}

inline const json& field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "/" + key, "missing");
    return *it;
}

inline const json* optional_field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path, "must be finite");
    return x;
}

inline std::string text(const json& v, const std::string& path) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    fail(path, "expected a string id");
}

inline std::size_t count(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(path, "expected a nonnegative integer");
    return static_cast<std::size_t>(v.get<long long>());
}

inline const json& array(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
}

/// A per-commodity vector given either as one number (C must be 1, or the
/// value is repeated when `broadcast`) or as an array of C numbers.
inline CommodityFlow commodity_vector(const json& v, std::size_t C, const std::string& path, bool broadcast) {
    if (v.is_number()) {
        if (C != 1 && !broadcast) fail(path, "expected one value per commodity");
        return CommodityFlow(C, number(v, path));
    }
    if (!v.is_array() || v.size() != C) fail(path, "expected " + std::to_string(C) + " values, one per commodity");
    CommodityFlow out(C);
    for (std::size_t c = 0; c < C; ++c) out[c] = number(v[c], path + "/" + std::to_string(c));
    return out;
}

/// A split entry: a number, "unassigned", or an array of either per commodity.
inline std::vector<std::optional<double>> split_entry(const json& v, std::size_t C, const std::string& path) {
    auto one = [&](const json& x, const std::string& p) -> std::optional<double> {
        if (x.is_string()) {
            if (x.get<std::string>() != kUnassigned) fail(p, "the only string allowed here is \"unassigned\"");
            return std::nullopt;
        }
        return number(x, p);
    };
    if (!v.is_array()) return std::vector<std::optional<double>>(C, one(v, path));
    if (v.size() != C) fail(path, "expected " + std::to_string(C) + " split ratios, one per commodity");
    std::vector<std::optional<double>> out(C);
    for (std::size_t c = 0; c < C; ++c) out[c] = one(v[c], path + "/" + std::to_string(c));
    return out;
}

inline json split_value_to_json(const std::optional<double>& b) { return b ? json(*b) : json(kUnassigned); }

inline bool is_safe_id(const std::string& id) {
    return !id.empty() && id.find_first_of(",\"\r\n") == std::string::npos;
}

/// Commodity names from either a count or a list of names.
inline std::vector<std::string> commodities(const json& doc, const std::string& path) {
    const json* v = optional_field(doc, "commodities");
    if (!v) return {"0"};
    std::vector<std::string> names;
    if (v->is_number_integer()) {
        const std::size_t C = count(*v, path + "/commodities");
        if (C == 0) fail(path + "/commodities", "needs at least one commodity");
        for (std::size_t c = 0; c < C; ++c) names.push_back(std::to_string(c));
        return names;
    }
    const json& arr = array(*v, path + "/commodities");
    if (arr.empty()) fail(path + "/commodities", "needs at least one commodity");
    for (std::size_t c = 0; c < arr.size(); ++c) {
        names.push_back(text(arr[c], path + "/commodities/" + std::to_string(c)));
        if (!is_safe_id(names.back())) fail(path + "/commodities/" + std::to_string(c), "names may not contain commas or quotes");
    }
    return names;
}

inline void check_version(const json& doc) {
    const json* v = optional_field(doc, "version");
    if (v && (!v->is_number_integer() || v->get<int>() != kFormatVersion))
        fail("/version", "unsupported format version; expected " + std::to_string(kFormatVersion));
}

inline json parse_text(const std::string& content, const std::string& origin) {
    try {
        return json::parse(content);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// A value that is either constant or a per-step list. `is_series` decides
/// whether the given JSON is a list of values rather than a single value.
template <class T, class Parse, class IsSeries>
Profile<T> profile(const json& v, const std::string& path, Parse parse, IsSeries is_series) {
    Profile<T> p;
    if (is_series(v)) {
        if (v.empty()) fail(path, "profile must not be empty");
        for (std::size_t t = 0; t < v.size(); ++t) p.values.push_back(parse(v[t], path + "/" + std::to_string(t)));
    } else {
        p.values.push_back(parse(v, path));
    }
    return p;
}

inline double per_hour_to_per_step(double x, double dt) { return x * dt / 3600.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario documents

namespace detail {

inline FundamentalDiagram diagram(const json& obj, double length, double dt, const std::string& path) {
    const double F = number(field(obj, "capacity", path), path + "/capacity");
    const double vf = number(field(obj, "free_flow_speed", path), path + "/free_flow_speed");
    const double w = number(field(obj, "congestion_wave_speed", path), path + "/congestion_wave_speed");
    const double nj = number(field(obj, "jam_density", path), path + "/jam_density");
    for (double x : {F, vf, w, nj})
        if (x < 0.0) fail(path, "diagram parameters must be nonnegative");
    // Scale without checking; validate() reports CFL and shape problems
    // together with everything else.
    FundamentalDiagram fd;
    fd.capacity = F * dt / 3600.0;
    fd.free_flow_speed = vf * dt / 3600.0 / length;
    fd.congestion_wave_speed = w * dt / 3600.0 / length;
    fd.jam_density = nj * length;
    return fd;
}

inline ControlHook make_hook(const json& c, const Network& net, const std::string& path) {
    const std::string type = text(field(c, "type", path), path + "/type");
    const json* n = optional_field(c, "name");
    const std::string name = n ? text(*n, path + "/name") : type;
    auto link = [&](const char* key) {
        const std::string id = text(field(c, key, path), path + "/" + key);
        auto l = net.find_link(id);
        if (!l) fail(path + "/" + key, "unknown link " + id);
        return *l;
    };
    auto window = [&](const char* key, std::size_t dflt) {
        const json* v = optional_field(c, key);
        return v ? count(*v, path + "/" + key) : dflt;
    };
    auto factor = [&](const char* key) {
        const json* v = optional_field(c, key);
        const double x = v ? number(*v, path + "/" + key) : 1.0;
        if (x < 0.0) fail(path + "/" + key, "factors must be nonnegative");
        return x;
    };
    if (type == "scale_link")
        return scale_link(name, link("link"), factor("capacity_factor"), factor("speed_factor"), window("from", 0),
                          window("until", static_cast<std::size_t>(-1)));
    if (type == "override_priorities") {
        const std::string id = text(field(c, "node", path), path + "/node");
        auto v = net.find_node(id);
        if (!v) fail(path + "/node", "unknown node " + id);
        const json& arr = array(field(c, "priorities", path), path + "/priorities");
        std::vector<double> p;
        for (std::size_t i = 0; i < arr.size(); ++i) p.push_back(number(arr[i], path + "/priorities/" + std::to_string(i)));
        if (p.size() != net.nodes[*v].inputs.size()) fail(path + "/priorities", "need one priority per node input");
        return override_priorities(name, *v, std::move(p), window("from", 0), window("until", static_cast<std::size_t>(-1)));
    }
    if (type == "density_meter") {
        const std::size_t watched = link("watch");
        const double threshold = number(field(c, "threshold", path), path + "/threshold");
        return density_meter(name, watched, threshold, link("link"), factor("factor"));
    }
    fail(path + "/type", "unknown control type " + type);
}

}  // namespace detail

/// Builds a scenario from a parsed document without validating it.
inline ScenarioDocument parse_scenario(const json& doc) {
    using namespace detail;
    check_version(doc);
    ScenarioDocument out;
    out.commodity_names = commodities(doc, "");
    Scenario& sc = out.scenario;
    Network& net = sc.network;
    const std::size_t C = out.commodity_names.size();
    net.commodities = C;
    const double dt = number(field(doc, "dt", ""), "/dt");
    if (dt <= 0.0) fail("/dt", "must be positive");
    sc.dt_seconds = dt;
    sc.horizon = count(field(doc, "horizon", ""), "/horizon");

    const json& links = array(field(doc, "links", ""), "/links");
    for (std::size_t l = 0; l < links.size(); ++l) {
        const std::string path = "/links/" + std::to_string(l);
        const json& obj = links[l];
        Link link;
        link.id = text(field(obj, "id", path), path + "/id");
        if (!is_safe_id(link.id)) fail(path + "/id", "ids may not contain commas or quotes");
        const std::string kind = text(field(obj, "kind", path), path + "/kind");
        if (kind == "ordinary") link.kind = LinkKind::Ordinary;
        else if (kind == "origin") link.kind = LinkKind::Origin;
        else if (kind == "destination") link.kind = LinkKind::Destination;
        else fail(path + "/kind", "expected ordinary, origin or destination");
        link.length = number(field(obj, "length", path), path + "/length");
        if (link.length <= 0.0) fail(path + "/length", "must be positive");
        if (const json* prof = optional_field(obj, "profile")) {
            const json& arr = array(*prof, path + "/profile");
            if (arr.empty()) fail(path + "/profile", "profile must not be empty");
            for (std::size_t t = 0; t < arr.size(); ++t)
                link.fd.values.push_back(diagram(arr[t], link.length, dt, path + "/profile/" + std::to_string(t)));
        } else {
            link.fd.values.push_back(diagram(obj, link.length, dt, path));
        }
        net.links.push_back(std::move(link));
    }
    const std::size_t L = net.links.size();
    auto link_ref = [&](const json& v, const std::string& path) {
        const std::string id = text(v, path);
        auto l = net.find_link(id);
        if (!l) fail(path, "unknown link " + id);
        return *l;
    };

    const json& nodes = array(field(doc, "nodes", ""), "/nodes");
    for (std::size_t v = 0; v < nodes.size(); ++v) {
        const std::string path = "/nodes/" + std::to_string(v);
        const json& obj = nodes[v];
        Node node;
        node.id = text(field(obj, "id", path), path + "/id");
        if (!is_safe_id(node.id)) fail(path + "/id", "ids may not contain commas or quotes");
        const json& ins = array(field(obj, "inputs", path), path + "/inputs");
        for (std::size_t i = 0; i < ins.size(); ++i) node.inputs.push_back(link_ref(ins[i], path + "/inputs/" + std::to_string(i)));
        const json& outs = array(field(obj, "outputs", path), path + "/outputs");
        for (std::size_t j = 0; j < outs.size(); ++j) node.outputs.push_back(link_ref(outs[j], path + "/outputs/" + std::to_string(j)));
        const std::size_t M = node.inputs.size(), N = node.outputs.size();

        // split: {input id: {output id: entry}}; a list of those is a profile.
        auto parse_split = [&](const json& m, const std::string& p) {
            if (!m.is_object()) fail(p, "expected an object keyed by input link id");
            std::vector<std::optional<double>> s(M * N * C, 0.0);
            for (auto it = m.begin(); it != m.end(); ++it) {
                std::size_t i = M;
                for (std::size_t k = 0; k < M; ++k)
                    if (net.links[node.inputs[k]].id == it.key()) i = k;
                if (i == M) fail(p + "/" + it.key(), "not an input of this node");
                if (!it->is_object()) fail(p + "/" + it.key(), "expected an object keyed by output link id");
                for (auto jt = it->begin(); jt != it->end(); ++jt) {
                    std::size_t j = N;
                    for (std::size_t k = 0; k < N; ++k)
                        if (net.links[node.outputs[k]].id == jt.key()) j = k;
                    const std::string q = p + "/" + it.key() + "/" + jt.key();
                    if (j == N) fail(q, "not an output of this node");
                    const auto e = split_entry(*jt, C, q);
                    for (std::size_t c = 0; c < C; ++c) s[(i * N + j) * C + c] = e[c];
                }
            }
            return s;
        };
        if (const json* sp = optional_field(obj, "split")) {
            node.split = profile<std::vector<std::optional<double>>>(*sp, path + "/split", parse_split,
                                                                      [](const json& x) { return x.is_array(); });
        } else if (N == 1) {
            node.split = Profile<std::vector<std::optional<double>>>::constant(
                std::vector<std::optional<double>>(M * C, 1.0));
        }

        if (const json* pr = optional_field(obj, "priorities")) {
            auto parse = [&](const json& arr, const std::string& p) {
                array(arr, p);
                std::vector<double> out;
                for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(number(arr[i], p + "/" + std::to_string(i)));
                return out;
            };
            node.priority = profile<std::vector<double>>(
                *pr, path + "/priorities", parse, [](const json& x) { return x.is_array() && !x.empty() && x[0].is_array(); });
        }

        // restriction: {input id: N x N matrix}, row = restricting output,
        // column = affected output. Inputs left out keep full FIFO.
        if (const json* re = optional_field(obj, "restriction")) {
            auto parse = [&](const json& m, const std::string& p) {
                if (!m.is_object()) fail(p, "expected an object keyed by input link id");
                std::vector<double> eta(M * N * N, 1.0);
                for (auto it = m.begin(); it != m.end(); ++it) {
                    std::size_t i = M;
                    for (std::size_t k = 0; k < M; ++k)
                        if (net.links[node.inputs[k]].id == it.key()) i = k;
                    const std::string q = p + "/" + it.key();
                    if (i == M) fail(q, "not an input of this node");
                    if (!it->is_array() || it->size() != N) fail(q, "expected an outputs x outputs matrix");
                    for (std::size_t j = 0; j < N; ++j) {
                        const json& row = (*it)[j];
                        if (!row.is_array() || row.size() != N) fail(q + "/" + std::to_string(j), "expected a row of " + std::to_string(N));
                        for (std::size_t k = 0; k < N; ++k)
                            eta[(i * N + j) * N + k] = number(row[k], q + "/" + std::to_string(j) + "/" + std::to_string(k));
                    }
                }
                return eta;
            };
            node.restriction = profile<std::vector<double>>(*re, path + "/restriction", parse,
                                                            [](const json& x) { return x.is_array(); });
        }
        net.nodes.push_back(std::move(node));
    }

    sc.demand.assign(L, {});
    if (const json* ds = optional_field(doc, "demands")) {
        const json& arr = array(*ds, "/demands");
        for (std::size_t k = 0; k < arr.size(); ++k) {
            const std::string path = "/demands/" + std::to_string(k);
            const std::size_t l = link_ref(field(arr[k], "link", path), path + "/link");
            auto parse = [&](const json& v, const std::string& p) {
                CommodityFlow d = commodity_vector(v, C, p, false);
                for (double& x : d) x = per_hour_to_per_step(x, dt);
                return d;
            };
            // A list of numbers is a per-commodity vector when C > 1 and a
            // series when C == 1; nested lists are always a series.
            sc.demand[l] = profile<CommodityFlow>(field(arr[k], "flow", path), path + "/flow", parse, [&](const json& x) {
                return x.is_array() && (C == 1 || (!x.empty() && x[0].is_array()));
            });
        }
    }
    for (std::size_t l = 0; l < L; ++l)
        if (net.links[l].kind == LinkKind::Origin && sc.demand[l].empty())
            sc.demand[l] = Profile<CommodityFlow>::constant(CommodityFlow(C, 0.0));

    sc.initial.resize(L);
    std::vector<bool> theta_given(L, false);
    for (std::size_t l = 0; l < L; ++l) sc.initial[l].n.assign(C, 0.0);
    if (const json* init = optional_field(doc, "initial")) {
        const json& arr = array(*init, "/initial");
        for (std::size_t k = 0; k < arr.size(); ++k) {
            const std::string path = "/initial/" + std::to_string(k);
            const std::size_t l = link_ref(field(arr[k], "link", path), path + "/link");
            if (const json* n = optional_field(arr[k], "vehicles")) sc.initial[l].n = commodity_vector(*n, C, path + "/vehicles", false);
            if (const json* th = optional_field(arr[k], "theta")) {
                sc.initial[l].theta = static_cast<int>(count(*th, path + "/theta"));
                theta_given[l] = true;
            }
        }
    }
    for (std::size_t l = 0; l < L; ++l)
        if (!theta_given[l] && !net.links[l].fd.empty())
            sc.initial[l].theta = initial_metastate(sc.initial[l].total_vehicles(), net.links[l].fd.at(0));

    if (const json* cs = optional_field(doc, "controls")) {
        const json& arr = array(*cs, "/controls");
        for (std::size_t k = 0; k < arr.size(); ++k)
            sc.hooks.push_back(make_hook(arr[k], net, "/controls/" + std::to_string(k)));
        out.controls = arr;
    }
    return out;
}

/// Parses and validates a scenario file. Throws ParseError, IoError or
/// ValidationError.
inline ScenarioDocument load_scenario(const std::string& path) {
    auto doc = parse_scenario(detail::parse_text(detail::read_file(path), path));
    require_valid(doc.scenario);
    return doc;
}

/// Writes a scenario back in document units. Loading the result gives the
/// same scenario up to floating-point rounding of the unit conversions.
inline json to_json(const ScenarioDocument& d) {
    const Scenario& sc = d.scenario;
    const Network& net = sc.network;
    const double dt = sc.dt_seconds;
    const std::size_t C = net.commodities;
    json doc;
    doc["version"] = kFormatVersion;
    doc["commodities"] = d.commodity_names;
    doc["dt"] = dt;
    doc["horizon"] = sc.horizon;
    auto raw = [&](const FundamentalDiagram& fd, double length) {
        return json{{"capacity", fd.capacity * 3600.0 / dt},
                    {"free_flow_speed", fd.free_flow_speed * length * 3600.0 / dt},
                    {"congestion_wave_speed", fd.congestion_wave_speed * length * 3600.0 / dt},
                    {"jam_density", fd.jam_density / length}};
    };
    doc["links"] = json::array();
    for (const auto& l : net.links) {
        json j = {{"id", l.id}, {"kind", to_string(l.kind)}, {"length", l.length}};
        if (l.fd.size() == 1) j.update(raw(l.fd.values[0], l.length));
        else
            for (const auto& fd : l.fd.values) j["profile"].push_back(raw(fd, l.length));
        doc["links"].push_back(j);
    }
    doc["nodes"] = json::array();
    for (const auto& v : net.nodes) {
        const std::size_t M = v.inputs.size(), N = v.outputs.size();
        json j = {{"id", v.id}, {"inputs", json::array()}, {"outputs", json::array()}};
        for (auto l : v.inputs) j["inputs"].push_back(net.links[l].id);
        for (auto l : v.outputs) j["outputs"].push_back(net.links[l].id);
        auto split = [&](const std::vector<std::optional<double>>& s) {
            json m = json::object();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t jj = 0; jj < N; ++jj) {
                    json e = json::array();
                    for (std::size_t c = 0; c < C; ++c) e.push_back(detail::split_value_to_json(s[(i * N + jj) * C + c]));
                    m[net.links[v.inputs[i]].id][net.links[v.outputs[jj]].id] = e;
                }
            return m;
        };
        if (v.split.size() == 1) j["split"] = split(v.split.values[0]);
        else
            for (const auto& s : v.split.values) j["split"].push_back(split(s));
        if (!v.priority.empty()) j["priorities"] = v.priority.size() == 1 ? json(v.priority.values[0]) : json(v.priority.values);
        auto eta = [&](const std::vector<double>& e) {
            json m = json::object();
            for (std::size_t i = 0; i < M; ++i) {
                json rows = json::array();
                for (std::size_t a = 0; a < N; ++a) {
                    json row = json::array();
                    for (std::size_t b = 0; b < N; ++b) row.push_back(e[(i * N + a) * N + b]);
                    rows.push_back(row);
                }
                m[net.links[v.inputs[i]].id] = rows;
            }
            return m;
        };
        if (v.restriction.size() == 1) j["restriction"] = eta(v.restriction.values[0]);
        else
            for (const auto& e : v.restriction.values) j["restriction"].push_back(eta(e));
        doc["nodes"].push_back(j);
    }
    doc["demands"] = json::array();
    for (std::size_t l = 0; l < net.links.size(); ++l) {
        if (sc.demand[l].empty()) continue;
        json series = json::array();
        for (const auto& d : sc.demand[l].values) {
            json v = json::array();
            for (double x : d) v.push_back(x * 3600.0 / dt);
            series.push_back(v);
        }
        doc["demands"].push_back({{"link", net.links[l].id}, {"flow", series}});
    }
    doc["initial"] = json::array();
    for (std::size_t l = 0; l < net.links.size(); ++l)
        doc["initial"].push_back({{"link", net.links[l].id}, {"vehicles", sc.initial[l].n}, {"theta", sc.initial[l].theta}});
    doc["controls"] = d.controls;
    return doc;
}

// ---------------------------------------------------------------------------
// Node instances

/// A standalone node for one timestep, with link names for reporting.
struct NodeInstance {
    PartialSplitSpec spec;
    std::vector<double> restriction;  // [(i*N + j)*N + k]
    std::vector<std::string> input_ids, output_ids, commodity_names;

    /// NodeSpec with the given full split ratios (the instance's own when it
    /// has no unassigned entries).
    NodeSpec node_spec(const std::vector<double>& split) const {
        NodeSpec s = NodeSpec::sized(spec.inputs, spec.outputs, spec.commodities);
        s.demand = spec.demand;
        s.priority = spec.priority;
        s.supply = spec.supply;
        s.restriction = restriction;
        s.split = split;
        return s;
    }
    NodeSpec node_spec() const {
        if (spec.has_unknowns()) throw InvalidSpec("node instance has unassigned split ratios");
        std::vector<double> s(spec.split.size());
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = *spec.split[k];
        return node_spec(s);
    }
};

/// Node instance document:
///   {version, commodities, inputs: [{id, demand, priority?, capacity?}],
///    outputs: [{id, supply}], split: [[entry per output] per input],
///    restriction?: [N x N matrix per input]}
/// Priorities default to the input capacities when every input has one and
/// to equal weights otherwise.
inline NodeInstance parse_node_instance(const json& doc) {
    using namespace detail;
    check_version(doc);
    NodeInstance out;
    out.commodity_names = commodities(doc, "");
    const std::size_t C = out.commodity_names.size();
    const json& ins = array(field(doc, "inputs", ""), "/inputs");
    const json& outs = array(field(doc, "outputs", ""), "/outputs");
    const std::size_t M = ins.size(), N = outs.size();
    if (M == 0 || N == 0) fail("/", "a node needs at least one input and one output");
    out.spec = PartialSplitSpec::sized(static_cast<int>(M), static_cast<int>(N), static_cast<int>(C));

    std::size_t with_priority = 0, with_capacity = 0;
    std::vector<double> caps(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        const std::string path = "/inputs/" + std::to_string(i);
        out.input_ids.push_back(text(field(ins[i], "id", path), path + "/id"));
        const auto d = commodity_vector(field(ins[i], "demand", path), C, path + "/demand", false);
        for (std::size_t c = 0; c < C; ++c) out.spec.demand[i * C + c] = d[c];
        if (const json* p = optional_field(ins[i], "priority")) {
            out.spec.priority[i] = number(*p, path + "/priority");
            ++with_priority;
        }
        if (const json* cap = optional_field(ins[i], "capacity")) {
            caps[i] = number(*cap, path + "/capacity");
            ++with_capacity;
        }
    }
    if (with_priority != 0 && with_priority != M) fail("/inputs", "give a priority for every input or for none");
    if (with_priority == 0) {
        if (with_capacity == M) out.spec.priority = tampere_priorities(caps);
        else out.spec.priority.assign(M, 1.0);
    }
    for (std::size_t j = 0; j < N; ++j) {
        const std::string path = "/outputs/" + std::to_string(j);
        out.output_ids.push_back(text(field(outs[j], "id", path), path + "/id"));
        out.spec.supply[j] = number(field(outs[j], "supply", path), path + "/supply");
    }

    if (const json* sp = optional_field(doc, "split")) {
        const json& rows = array(*sp, "/split");
        if (rows.size() != M) fail("/split", "expected one row per input");
        for (std::size_t i = 0; i < M; ++i) {
            const std::string path = "/split/" + std::to_string(i);
            const json& row = array(rows[i], path);
            if (row.size() != N) fail(path, "expected one entry per output");
            for (std::size_t j = 0; j < N; ++j) {
                const auto e = split_entry(row[j], C, path + "/" + std::to_string(j));
                for (std::size_t c = 0; c < C; ++c)
                    out.spec.split[out.spec.split_index(static_cast<int>(i), static_cast<int>(j), static_cast<int>(c))] = e[c];
            }
        }
    } else if (N == 1) {
        std::fill(out.spec.split.begin(), out.spec.split.end(), std::optional<double>(1.0));
    } else {
        fail("/split", "missing; only single-output nodes may omit it");
    }

    out.restriction.assign(M * N * N, 1.0);
    if (const json* re = optional_field(doc, "restriction")) {
        const json& mats = array(*re, "/restriction");
        if (mats.size() != M) fail("/restriction", "expected one matrix per input");
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                const std::string path = "/restriction/" + std::to_string(i) + "/" + std::to_string(j);
                if (!mats[i].is_array() || mats[i].size() != N || !mats[i][j].is_array() || mats[i][j].size() != N)
                    fail(path, "expected an outputs x outputs matrix");
                for (std::size_t k = 0; k < N; ++k)
                    out.restriction[(i * N + j) * N + k] = number(mats[i][j][k], path + "/" + std::to_string(k));
            }
    }

    auto ds = validate(out.spec);
    NodeSpec probe = NodeSpec::sized(M, N, C);
    probe.restriction = out.restriction;
    for (auto& d : validate(probe))
        if (d.message.find("restriction") != std::string::npos) ds.push_back(d);
    if (!out.spec.has_unknowns())
        for (auto& d : validate(out.node_spec()))
            if (d.code == "SplitSumViolation") ds.push_back(d);
    if (!ds.empty()) throw ValidationError(std::move(ds));
    return out;
}

inline NodeInstance load_node_instance(const std::string& path) {
    return parse_node_instance(detail::parse_text(detail::read_file(path), path));
}

// ---------------------------------------------------------------------------
// Solutions

/// Full split ratios as [input][output][commodity].
inline json split_to_json(const NodeInstance& inst, const std::vector<double>& split) {
    const std::size_t M = inst.input_ids.size(), N = inst.output_ids.size(), C = inst.commodity_names.size();
    json out = json::array();
    for (std::size_t i = 0; i < M; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < N; ++j) {
            json cell = json::array();
            for (std::size_t c = 0; c < C; ++c) cell.push_back(split[(i * N + j) * C + c]);
            row.push_back(cell);
        }
        out.push_back(row);
    }
    return out;
}

inline json solution_to_json(const NodeInstance& inst, const FlowSolution& sol, std::string_view model,
                             const std::vector<double>* split = nullptr) {
    json flows = json::array();
    for (std::size_t i = 0; i < sol.inputs; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < sol.outputs; ++j) {
            json cell = json::array();
            for (std::size_t c = 0; c < sol.commodities; ++c) cell.push_back(sol.f(i, j, c));
            row.push_back(cell);
        }
        flows.push_back(row);
    }
    json out = {{"model", model},
                {"inputs", inst.input_ids},
                {"outputs", inst.output_ids},
                {"commodities", inst.commodity_names},
                {"flows", flows},
                {"total", sol.total()},
                {"iterations", sol.iterations}};
    if (split) out["split"] = split_to_json(inst, *split);
    return out;
}

/// Reads the "flows" array of a solution document for a node of the given size.
inline FlowSolution parse_solution(const json& doc, std::size_t M, std::size_t N, std::size_t C) {
    using namespace detail;
    const json& flows = array(field(doc, "flows", ""), "/flows");
    if (flows.size() != M) throw DimensionMismatch("solution has " + std::to_string(flows.size()) + " inputs, node has " + std::to_string(M));
    FlowSolution sol = FlowSolution::sized(M, N, C);
    for (std::size_t i = 0; i < M; ++i) {
        const std::string path = "/flows/" + std::to_string(i);
        if (!flows[i].is_array() || flows[i].size() != N) throw DimensionMismatch(path + ": expected one entry per output");
        for (std::size_t j = 0; j < N; ++j) {
            const auto v = commodity_vector(flows[i][j], C, path + "/" + std::to_string(j), false);
            for (std::size_t c = 0; c < C; ++c) sol.f(i, j, c) = v[c];
        }
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Results tables

/// Fixed 9-significant-digit rendering used in every CSV cell.
inline std::string format_number(double x) {
    if (x == 0.0) x = 0.0;  // no "-0"
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

inline constexpr const char* kLinkHeader = "t,link,commodity,n,f_in,f_out,speed,theta";
inline constexpr const char* kNodeHeader = "t,node,i,j,c,beta_assigned,flow";

/// Streams states to <dir>/links.csv and <dir>/nodes.csv. Link rows cover
/// every state including t = 0; node rows start at t = 1 because row t
/// describes the step that ended at t.
class ResultsWriter {
public:
    ResultsWriter(const std::string& dir, const ScenarioDocument& doc) : doc_(doc) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
        links_.open(std::filesystem::path(dir) / "links.csv", std::ios::binary | std::ios::trunc);
        nodes_.open(std::filesystem::path(dir) / "nodes.csv", std::ios::binary | std::ios::trunc);
        if (!links_ || !nodes_) throw IoError("cannot write results in " + dir);
        links_ << kLinkHeader << '\n';
        nodes_ << kNodeHeader << '\n';
    }

    void write(const SimState& s) {
        const Network& net = doc_.scenario.network;
        const auto& names = doc_.commodity_names;
        const std::string t = std::to_string(s.t);
        for (std::size_t l = 0; l < net.links.size(); ++l)
            for (std::size_t c = 0; c < net.commodities; ++c)
                links_ << t << ',' << net.links[l].id << ',' << names[c] << ',' << format_number(s.links[l].n[c]) << ','
                       << format_number(s.inflow[l][c]) << ',' << format_number(s.outflow[l][c]) << ','
                       << format_number(s.speed[l]) << ',' << s.links[l].theta << '\n';
        if (s.t == 0) return;
        for (std::size_t v = 0; v < net.nodes.size(); ++v) {
            const Node& node = net.nodes[v];
            const auto& rec = s.nodes[v];
            for (std::size_t i = 0; i < node.inputs.size(); ++i)
                for (std::size_t j = 0; j < node.outputs.size(); ++j)
                    for (std::size_t c = 0; c < net.commodities; ++c)
                        nodes_ << t << ',' << node.id << ',' << net.links[node.inputs[i]].id << ','
                               << net.links[node.outputs[j]].id << ',' << names[c] << ','
                               << format_number(rec.split[(i * node.outputs.size() + j) * net.commodities + c]) << ','
                               << format_number(rec.flow.f(i, j, c)) << '\n';
        }
    }

    void close() {
        links_.close();
        nodes_.close();
        if (links_.fail() || nodes_.fail()) throw IoError("error while writing results");
    }

private:
    const ScenarioDocument& doc_;
    std::ofstream links_, nodes_;
};

struct LinkRow {
    std::size_t t = 0;
    std::string link, commodity;
    double n = 0, f_in = 0, f_out = 0, speed = 0;
    int theta = 0;
};

inline std::vector<LinkRow> read_link_rows(const std::string& path) {
    std::istringstream in(detail::read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != kLinkHeader) throw ParseError(path + ": unexpected header");
    std::vector<LinkRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ParseError(path + ":" + std::to_string(lineno) + ": expected 8 columns");
        try {
            LinkRow r;
            r.t = std::stoul(cells[0]);
            r.link = cells[1];
            r.commodity = cells[2];
            r.n = std::stod(cells[3]);
            r.f_in = std::stod(cells[4]);
            r.f_out = std::stod(cells[5]);
            r.speed = std::stod(cells[6]);
            r.theta = std::stoi(cells[7]);
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad number");
        }
    }
    return rows;
}

}  // namespace lnctm::io
