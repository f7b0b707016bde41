#include <cstdio>
#include <filesystem>

#include "commands.hpp"
#include "lumen/netlist.hpp"

namespace lumen::cli {

namespace {

std::string path_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

/// Default biomarker definitions file: the netlist path with extension
/// swapped to .outputs, when present.
std::string default_outputs_path(const std::string& netlist_path) {
    std::filesystem::path p(netlist_path);
    p.replace_extension(".outputs");
    return std::filesystem::exists(p) ? p.string() : std::string();
}

}  // namespace

int cmd_simulate(RunContext& ctx) {
    finalize_common(ctx);
    const std::string netlist_path = ctx.get_string("netlist", "");
    if (netlist_path.empty()) throw ParseError("simulate: netlist path required");

    const Netlist net = load_netlist(netlist_path);
    auto values = net.nominal_values();
    const std::string params_mode = ctx.get_string("params_file", "nominal");
    if (params_mode != "nominal")
        for (const auto& [name, value] : read_kv_file(params_mode)) values[name] = value;
    for (const auto& [name, value] : ctx.param_overrides()) {
        if (!values.count(name)) throw ParseError("unknown parameter override: " + name);
        values[name] = value;
    }

    const DaeSystem system = assemble_dae(net, values, ctx.get_bool("allow_out_of_range", false));
    const CycleSolution cycle = run_to_periodic(system, ctx.solver_config());

    std::map<std::string, std::string> meta;
    meta["netlist"] = netlist_path;
    meta["netlist_hash"] = fnv1a_hex(read_text_file(netlist_path));
    meta["converged"] = cycle.converged ? "true" : "false";
    meta["cycles_used"] = std::to_string(cycle.cycles_used);

    const std::string stem = path_stem(netlist_path);
    Table traj;
    traj.columns.push_back("t");
    for (const auto& label : system.diff_labels) traj.columns.push_back(label);
    for (const auto& label : system.alg_labels) traj.columns.push_back(label);
    const Index rows = static_cast<Index>(cycle.times.size());
    traj.values.resize(rows, 1 + system.n_diff + system.n_alg);
    for (Index i = 0; i < rows; ++i) traj.values(i, 0) = cycle.times[static_cast<size_t>(i)];
    traj.values.middleCols(1, system.n_diff) = cycle.states;
    traj.values.middleCols(1 + system.n_diff, system.n_alg) = cycle.algebraic;
    write_artifact_csv(ctx, ctx.out_path(stem + "_trajectory.csv"), traj, meta);

    std::string outputs_path = ctx.get_string("outputs", default_outputs_path(netlist_path));
    if (!outputs_path.empty()) {
        const auto defs = load_biomarker_defs(outputs_path);
        const BiomarkerSet biomarkers = extract_biomarkers(system, cycle, defs);
        std::vector<std::pair<std::string, double>> ordered;
        for (const auto& def : defs) ordered.emplace_back(def.name, biomarkers.at(def.name));
        write_artifact_kv(ctx, ctx.out_path(stem + "_biomarkers.txt"), ordered, meta);
        for (const auto& [name, value] : ordered)
            std::printf("%-18s %s\n", name.c_str(), format_double(value).c_str());
    }
    std::printf("converged=%s cycles=%d states=%lld alg=%lld\n", cycle.converged ? "true" : "false",
                cycle.cycles_used, static_cast<long long>(system.n_diff),
                static_cast<long long>(system.n_alg));

    if (!cycle.converged && ctx.get_bool("require_convergence", true))
        throw SolverError("periodic convergence not reached within max_cycles");
    return 0;
}

void wire_simulate(CLI::App* cmd, RunContext& ctx) {
    cmd->add_option_function<std::string>(
           "netlist", [&ctx](const std::string& v) { ctx.flag_values.emplace_back("netlist", v); },
           "Netlist file (.net)")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    add_string_flag(cmd, ctx, "--params", "params_file",
                    "'nominal' or a name = value file of parameter values");
    add_string_flag(cmd, ctx, "--outputs", "outputs",
                    "Biomarker definitions file (default: <netlist>.outputs)");
    add_bool_flag(cmd, ctx, "--allow-out-of-range", "allow_out_of_range",
                  "Permit parameter values outside [low, high]");
    add_param_flag(cmd, ctx);
    wire_solver_flags(cmd, ctx);
}

}  // namespace lumen::cli
