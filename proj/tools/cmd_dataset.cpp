#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "commands.hpp"
#include "lumen/netlist.hpp"
#include "lumen/sampling.hpp"

namespace lumen::cli {

namespace {

std::string default_outputs_path(const std::string& netlist_path) {
    std::filesystem::path p(netlist_path);
    p.replace_extension(".outputs");
    return std::filesystem::exists(p) ? p.string() : std::string();
}

}  // namespace

int resolve_workers(const RunContext& ctx) {
    int workers = ctx.get_int("workers", 0);
    if (workers <= 0)
        if (const char* env = std::getenv("LUMEN_WORKERS")) workers = std::atoi(env);
    return workers > 0 ? workers : 1;
}

int cmd_dataset(RunContext& ctx) {
    finalize_common(ctx);
    const std::string netlist_path = ctx.get_string("netlist", "");
    if (netlist_path.empty()) throw ParseError("dataset: netlist path required");
    const Netlist net = load_netlist(netlist_path);

    // Sampling ranges: the netlist's [low, high] per sampled parameter,
    // optionally overridden under config["ranges"][name] = [low, high].
    const auto names = net.sampled_parameters();
    if (names.empty()) throw ParseError("netlist '" + netlist_path + "' samples no parameters");
    std::vector<std::pair<double, double>> ranges;
    for (const auto& name : names) {
        const auto& spec = net.parameters.at(name);
        double lo = spec.low, hi = spec.high;
        const Json over = ctx.get("ranges." + name);
        if (!over.is_null()) {
            if (!over.is_array() || over.size() != 2)
                throw ParseError("ranges." + name + " must be a [low, high] pair");
            lo = over[0].get<double>();
            hi = over[1].get<double>();
        }
        ranges.emplace_back(lo, hi);
    }

    const std::string kind = ctx.get_string("design.kind", "saltelli");
    const int n = ctx.get_int("design.N", 256);
    DesignMatrix design;
    if (kind == "saltelli")
        design = saltelli_design(ranges, n, ctx.seed, ctx.get_bool("design.second_order", false));
    else if (kind == "sobol")
        design = sobol_design(ranges, n, ctx.seed);
    else
        throw ParseError("unknown design kind '" + kind + "' (expected saltelli or sobol)");

    const std::string outputs_path = ctx.get_string("outputs", default_outputs_path(netlist_path));
    if (outputs_path.empty())
        throw ParseError("dataset: no biomarker definitions (--outputs or <netlist>.outputs)");
    const auto defs = load_biomarker_defs(outputs_path);

    const int workers = resolve_workers(ctx);
    std::printf("design=%s rows=%lld d=%d workers=%d\n", kind.c_str(),
                static_cast<long long>(design.rows()), design.d, workers);
    std::fflush(stdout);

    Dataset ds = generate_dataset(net, design, defs, ctx.solver_config(), workers);
    ds.meta["config_hash"] = ctx.config_hash();
    ds.meta["seed"] = std::to_string(ctx.seed);
    ds.meta["netlist"] = netlist_path;
    ds.meta["netlist_hash"] = fnv1a_hex(read_text_file(netlist_path));
    ds.meta["design"] = kind;
    ds.meta["design_N"] = std::to_string(n);

    const std::string stem = std::filesystem::path(netlist_path).stem().string();
    const std::string path =
        ctx.out_path(ctx.get_string("name", stem + "_dataset") + ".csv");
    save_dataset(ds, path);
    std::printf("wrote %s (%lld rows, %zu failed)\n", path.c_str(),
                static_cast<long long>(ds.rows()), ds.failed_rows.size());
    return 0;
}

void wire_dataset(CLI::App* cmd, RunContext& ctx) {
    cmd->add_option_function<std::string>(
           "netlist", [&ctx](const std::string& v) { ctx.flag_values.emplace_back("netlist", v); },
           "Netlist file (.net)")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    add_string_flag(cmd, ctx, "--outputs", "outputs",
                    "Biomarker definitions file (default: <netlist>.outputs)");
    add_string_flag(cmd, ctx, "--design", "design.kind", "Design kind: saltelli or sobol");
    add_int_flag(cmd, ctx, "-N,--design-size", "design.N",
                 "Base sample count N (saltelli rows = (d+2)N, sobol rows = N)");
    add_bool_flag(cmd, ctx, "--second-order", "design.second_order",
                  "Add BA blocks for second-order Sobol indices ((2d+2)N rows)");
    add_string_flag(cmd, ctx, "--name", "name", "Artifact stem (default: <netlist>_dataset)");
    add_int_flag(cmd, ctx, "--workers", "workers",
                 "Solver worker threads (default: LUMEN_WORKERS or 1)");
    wire_solver_flags(cmd, ctx);
}

}  // namespace lumen::cli
