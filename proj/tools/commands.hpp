#pragma once

#include <CLI11.hpp>
#include <json.hpp>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lumen/io.hpp"
#include "lumen/solver.hpp"
#include "lumen/types.hpp"

namespace lumen::cli {

using Json = nlohmann::json;

/// Shared run settings: JSON config file with flag overrides (flags win).
/// The config hash recorded in artifacts is the FNV-1a of the effective
/// (merged) configuration dump, so identical effective configs produce
/// identical artifacts regardless of how they were specified.
struct RunContext {
    Json config = Json::object();
    std::string out_dir = "out";
    std::uint64_t seed = 1;

    // Parse-time storage filled by CLI11 bindings; merged in finalize_common.
    std::string config_path;
    std::vector<std::pair<std::string, Json>> flag_values;

    std::string config_hash() const { return fnv1a_hex(config.dump()); }

    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Dotted-path lookup; null when absent.
    Json get(const std::string& key) const;
    /// Dotted-path store, creating intermediate objects.
    void set(const std::string& key, Json value);

    /// Solver settings under config["solver"].
    SolverConfig solver_config() const;

    /// Parameter override map under config["params"] (name -> value).
    std::map<std::string, double> param_overrides() const;

    std::string out_path(const std::string& name) const;
};

/// Registers --config/--out/--seed/--set on a subcommand. Values land in
/// ctx.flag_values; finalize_common merges them over the config file.
void wire_common(CLI::App* cmd, RunContext& ctx);

/// Loads the config file (if any), applies flag overrides, and resolves
/// out_dir and seed; call first in each command body.
void finalize_common(RunContext& ctx);

/// Flag helpers: typed option writing to a dotted config key; duplicate
/// occurrences of the flag are usage errors.
void add_string_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag,
                     const std::string& key, const std::string& help);
void add_double_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag,
                     const std::string& key, const std::string& help);
void add_int_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag, const std::string& key,
                  const std::string& help);
void add_bool_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag, const std::string& key,
                   const std::string& help);
/// Repeatable name=value parameter override merged into config["params"].
void add_param_flag(CLI::App* cmd, RunContext& ctx);
/// Solver flags (--dt, --method, --cycle-tol, --max-cycles, --newton-tol).
void wire_solver_flags(CLI::App* cmd, RunContext& ctx);

/// Per-command extra flags and positionals.
void wire_simulate(CLI::App* cmd, RunContext& ctx);
void wire_dataset(CLI::App* cmd, RunContext& ctx);
void wire_train(CLI::App* cmd, RunContext& ctx);
void wire_evaluate(CLI::App* cmd, RunContext& ctx);
void wire_sobol(CLI::App* cmd, RunContext& ctx);
void wire_morris(CLI::App* cmd, RunContext& ctx);
void wire_estimate(CLI::App* cmd, RunContext& ctx);
void wire_uq(CLI::App* cmd, RunContext& ctx);
void wire_report(CLI::App* cmd, RunContext& ctx);

int cmd_simulate(RunContext& ctx);
int cmd_dataset(RunContext& ctx);
int cmd_train(RunContext& ctx);
int cmd_evaluate(RunContext& ctx);
int cmd_sobol(RunContext& ctx);
int cmd_morris(RunContext& ctx);
int cmd_estimate(RunContext& ctx);
int cmd_uq(RunContext& ctx);
int cmd_report(RunContext& ctx);

/// Writes a CSV artifact with `# key=value` metadata comment lines
/// (config hash and seed always included).
void write_artifact_csv(const RunContext& ctx, const std::string& path, const Table& table,
                        const std::map<std::string, std::string>& extra_meta = {});

/// Writes flat key = value text with the same metadata comments.
void write_artifact_kv(const RunContext& ctx, const std::string& path,
                       const std::vector<std::pair<std::string, double>>& values,
                       const std::map<std::string, std::string>& extra_meta = {});

/// Reads a key = value artifact back (metadata comments ignored).
std::vector<std::pair<std::string, double>> read_kv_file(const std::string& path);

/// Metadata comment lookup in an artifact ("# key=value" lines).
std::map<std::string, std::string> read_artifact_meta(const std::string& path);

}  // namespace lumen::cli
