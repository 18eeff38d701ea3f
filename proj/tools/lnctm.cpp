// Command-line front end: run scenarios, solve and check single nodes.
//
// Exit codes: 0 success, 1 invalid input (parse or validation failure, or a
// failed verification), 2 runtime error, 64 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "lnctm/assign.hpp"
#include "lnctm/engine.hpp"
#include "lnctm/io.hpp"
#include "lnctm/node.hpp"
#include "lnctm/oracle.hpp"

namespace {

using namespace lnctm;

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitUsage = 64;

void print_diagnostics(const std::vector<Diagnostic>& ds) {
    for (const auto& d : ds) std::cerr << d.to_string() << '\n';
}

int cmd_run(const std::string& path, const std::string& out, std::optional<std::size_t> steps, std::size_t threads) {
    auto doc = io::load_scenario(path);
    RunOptions opt;
    opt.threads = threads;
    opt.steps = steps;
    io::ResultsWriter writer(out, doc);
    std::optional<SimState> first;
    SimState last;
    run(doc.scenario, opt, [&](const SimState& s) {
        writer.write(s);
        if (!first) first = s;
        last = s;
    });
    writer.close();
    const Audit a = audit(*first, last);
    std::printf("steps %zu, links %zu, nodes %zu, conservation residual %.3g\n", last.t,
                doc.scenario.network.links.size(), doc.scenario.network.nodes.size(), a.relative_residual());
    return 0;
}

std::vector<double> full_split(const io::NodeInstance& inst) {
    if (!inst.spec.has_unknowns()) return inst.node_spec().split;
    return assign_split_ratios(inst.spec);
}

int cmd_node_solve(const std::string& path, NodeModel model) {
    const auto inst = io::load_node_instance(path);
    const auto split = full_split(inst);
    const auto sol = solve(inst.node_spec(split), model);
    const auto doc = io::solution_to_json(inst, sol, to_string(model), inst.spec.has_unknowns() ? &split : nullptr);
    std::cout << doc.dump(2) << '\n';
    return 0;
}

int cmd_assign(const std::string& path) {
    const auto inst = io::load_node_instance(path);
    const io::json doc = {{"inputs", inst.input_ids},
                          {"outputs", inst.output_ids},
                          {"commodities", inst.commodity_names},
                          {"split", io::split_to_json(inst, full_split(inst))}};
    std::cout << doc.dump(2) << '\n';
    return 0;
}

int cmd_check(const std::string& path) {
    auto doc = io::parse_scenario(io::detail::parse_text(io::detail::read_file(path), path));
    const auto ds = validate(doc.scenario);
    if (!ds.empty()) {
        print_diagnostics(ds);
        return kExitInvalid;
    }
    std::cout << "OK\n";
    return 0;
}

int cmd_verify(const std::string& node_path, const std::string& sol_path, double tol) {
    const auto inst = io::load_node_instance(node_path);
    const NodeSpec spec = inst.node_spec(full_split(inst));
    const auto sol = io::parse_solution(io::detail::parse_text(io::detail::read_file(sol_path), sol_path), spec.inputs,
                                        spec.outputs, spec.commodities);
    const auto report = check_solution(spec, sol, tol);
    std::cout << report.summary() << '\n';
    return report.satisfied() ? 0 : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Link-node cell transmission model"};
    app.require_subcommand(1);

    std::string scenario, out, node, solution;
    std::optional<std::size_t> steps;
    std::size_t threads = 1;
    double tol = 1e-6;
    std::string model_name = "mimo-relaxed";
    const std::map<std::string, NodeModel> models = {{"miso", NodeModel::Miso},
                                                     {"mimo-fifo", NodeModel::MimoFifo},
                                                     {"simo-relaxed", NodeModel::SimoRelaxed},
                                                     {"mimo-relaxed", NodeModel::MimoRelaxed}};

    auto* run_cmd = app.add_subcommand("run", "Simulate a scenario and write links.csv and nodes.csv");
    run_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();
    run_cmd->add_option("--out", out, "Output directory")->required();
    run_cmd->add_option("--steps", steps, "Number of steps (default: the scenario horizon)");
    run_cmd->add_option("--threads", threads, "Worker threads; 0 uses every core")->capture_default_str();

    auto* solve_cmd = app.add_subcommand("node-solve", "Solve one node instance and print the flows as JSON");
    solve_cmd->add_option("node", node, "Node instance JSON file")->required();
    solve_cmd->add_option("--model", model_name, "Node model")
        ->check(CLI::IsMember(models, CLI::ignore_case))
        ->capture_default_str();

    auto* assign_cmd = app.add_subcommand("assign", "Fill in unassigned split ratios of a node instance");
    assign_cmd->add_option("node", node, "Node instance JSON file")->required();

    auto* check_cmd = app.add_subcommand("check", "Validate a scenario");
    check_cmd->add_option("scenario", scenario, "Scenario JSON file")->required();

    auto* verify_cmd = app.add_subcommand("verify", "Check a node solution against every constraint");
    verify_cmd->group("");  // debugging aid, not listed in help
    verify_cmd->add_option("node", node, "Node instance JSON file")->required();
    verify_cmd->add_option("solution", solution, "Solution JSON file")->required();
    verify_cmd->add_option("--tol", tol, "Tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*run_cmd) return cmd_run(scenario, out, steps, threads);
        if (*solve_cmd) return cmd_node_solve(node, models.at(CLI::detail::to_lower(model_name)));
        if (*assign_cmd) return cmd_assign(node);
        if (*check_cmd) return cmd_check(scenario);
        if (*verify_cmd) return cmd_verify(node, solution, tol);
    } catch (const ValidationError& e) {
        std::cerr << e.what() << '\n';
        return kExitInvalid;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const InvalidSpec& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const DimensionMismatch& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
