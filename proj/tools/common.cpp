#include "commands.hpp"

#include <fstream>
#include <sstream>

namespace lumen::cli {

namespace {

std::vector<std::string> split_path(const std::string& key) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in(key);
    while (std::getline(in, part, '.')) parts.push_back(part);
    return parts;
}

const Json* find_path(const Json& root, const std::string& key) {
    const Json* node = &root;
    for (const auto& part : split_path(key)) {
        if (!node->is_object() || !node->contains(part)) return nullptr;
        node = &(*node)[part];
    }
    return node;
}

}  // namespace

Json RunContext::get(const std::string& key) const {
    const Json* node = find_path(config, key);
    return node ? *node : Json();
}

void RunContext::set(const std::string& key, Json value) {
    Json* node = &config;
    const auto parts = split_path(key);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            (*node)[parts[i]] = Json::object();
        node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = std::move(value);
}

double RunContext::get_double(const std::string& key, double fallback) const {
    const Json v = get(key);
    if (v.is_null()) return fallback;
    if (!v.is_number()) throw ParseError("config key '" + key + "' must be a number");
    return v.get<double>();
}

int RunContext::get_int(const std::string& key, int fallback) const {
    const Json v = get(key);
    if (v.is_null()) return fallback;
    if (!v.is_number_integer()) throw ParseError("config key '" + key + "' must be an integer");
    return v.get<int>();
}

std::string RunContext::get_string(const std::string& key, const std::string& fallback) const {
    const Json v = get(key);
    if (v.is_null()) return fallback;
    if (!v.is_string()) throw ParseError("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

bool RunContext::get_bool(const std::string& key, bool fallback) const {
    const Json v = get(key);
    if (v.is_null()) return fallback;
    if (!v.is_boolean()) throw ParseError("config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

SolverConfig RunContext::solver_config() const {
    SolverConfig cfg;
    cfg.dt = get_double("solver.dt", cfg.dt);
    cfg.method = method_from_string(get_string("solver.method", to_string(cfg.method)));
    cfg.newton_tol = get_double("solver.newton_tol", cfg.newton_tol);
    cfg.newton_max_iter = get_int("solver.newton_max_iter", cfg.newton_max_iter);
    cfg.max_cycles = get_int("solver.max_cycles", cfg.max_cycles);
    cfg.cycle_tol = get_double("solver.cycle_tol", cfg.cycle_tol);
    cfg.pseudo_period = get_double("solver.pseudo_period", cfg.pseudo_period);
    cfg.validate();
    return cfg;
}

std::map<std::string, double> RunContext::param_overrides() const {
    std::map<std::string, double> out;
    const Json params = get("params");
    if (params.is_null()) return out;
    if (!params.is_object()) throw ParseError("config key 'params' must be an object");
    for (const auto& [name, value] : params.items()) {
        if (!value.is_number()) throw ParseError("parameter override '" + name + "' must be a number");
        out[name] = value.get<double>();
    }
    return out;
}

std::string RunContext::out_path(const std::string& name) const { return out_dir + "/" + name; }

void wire_common(CLI::App* cmd, RunContext& ctx) {
    cmd->add_option("--config", ctx.config_path, "JSON config file (flags override its keys)")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    add_string_flag(cmd, ctx, "--out", "out_dir", "Output directory (default: out)");
    cmd->add_option_function<std::uint64_t>(
           "--seed", [&ctx](std::uint64_t v) { ctx.flag_values.emplace_back("seed", v); },
           "RNG seed recorded in all artifacts")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    cmd->add_option_function<std::vector<std::string>>(
        "--set",
        [&ctx](const std::vector<std::string>& kvs) {
            for (const auto& kv : kvs) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw CLI::ValidationError("--set expects key=value, got '" + kv + "'");
                const std::string key = kv.substr(0, eq);
                const std::string raw = kv.substr(eq + 1);
                Json value;
                try {
                    value = Json::parse(raw);
                } catch (const Json::parse_error&) {
                    value = raw;  // bare words are strings
                }
                ctx.flag_values.emplace_back(key, value);
            }
        },
        "Generic dotted-key config override (key=value, repeatable)");
}

void finalize_common(RunContext& ctx) {
    if (!ctx.config_path.empty()) {
        const std::string text = read_text_file(ctx.config_path);
        Json parsed;
        try {
            parsed = Json::parse(text);
        } catch (const Json::parse_error& e) {
            throw ParseError(ctx.config_path + ": " + e.what());
        }
        if (!parsed.is_object()) throw ParseError(ctx.config_path + ": config root must be an object");
        ctx.config = std::move(parsed);
    }
    for (const auto& [key, value] : ctx.flag_values) ctx.set(key, value);
    ctx.out_dir = ctx.get_string("out_dir", ctx.out_dir);
    const Json seed = ctx.get("seed");
    if (!seed.is_null()) {
        if (!seed.is_number_integer() || seed.get<std::int64_t>() < 0)
            throw ParseError("config key 'seed' must be a non-negative integer");
        ctx.seed = seed.get<std::uint64_t>();
    }
    // Canonical entries so the recorded hash always covers them.
    ctx.set("out_dir", ctx.out_dir);
    ctx.set("seed", ctx.seed);
}

namespace {

template <typename T>
void add_typed_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag, const std::string& key,
                    const std::string& help) {
    cmd->add_option_function<T>(
           flag, [&ctx, key](const T& v) { ctx.flag_values.emplace_back(key, Json(v)); }, help)
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
}

}  // namespace

void add_string_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag,
                     const std::string& key, const std::string& help) {
    add_typed_flag<std::string>(cmd, ctx, flag, key, help);
}

void add_double_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag,
                     const std::string& key, const std::string& help) {
    add_typed_flag<double>(cmd, ctx, flag, key, help);
}

void add_int_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag, const std::string& key,
                  const std::string& help) {
    add_typed_flag<int>(cmd, ctx, flag, key, help);
}

void add_bool_flag(CLI::App* cmd, RunContext& ctx, const std::string& flag, const std::string& key,
                   const std::string& help) {
    cmd->add_flag_function(
           flag, [&ctx, key](std::int64_t count) { ctx.flag_values.emplace_back(key, count > 0); },
           help)
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
}

void add_param_flag(CLI::App* cmd, RunContext& ctx) {
    cmd->add_option_function<std::vector<std::string>>(
        "--param",
        [&ctx](const std::vector<std::string>& kvs) {
            for (const auto& kv : kvs) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw CLI::ValidationError("--param expects name=value, got '" + kv + "'");
                double value = 0;
                try {
                    value = parse_double(kv.substr(eq + 1));
                } catch (const IoError&) {
                    throw CLI::ValidationError("--param value must be numeric in '" + kv + "'");
                }
                ctx.flag_values.emplace_back("params." + kv.substr(0, eq), value);
            }
        },
        "Model parameter override (name=value, repeatable)");
}

void wire_solver_flags(CLI::App* cmd, RunContext& ctx) {
    add_double_flag(cmd, ctx, "--dt", "solver.dt", "Time step");
    add_string_flag(cmd, ctx, "--method", "solver.method",
                    "backward-euler-newton | rk4-with-projection");
    add_double_flag(cmd, ctx, "--cycle-tol", "solver.cycle_tol", "Cycle convergence tolerance");
    add_int_flag(cmd, ctx, "--max-cycles", "solver.max_cycles", "Cycle cap for run_to_periodic");
    add_double_flag(cmd, ctx, "--newton-tol", "solver.newton_tol", "Newton residual tolerance");
}

namespace {

std::string meta_block(const RunContext& ctx, const std::map<std::string, std::string>& extra) {
    std::string text;
    text += "# config_hash=" + ctx.config_hash() + "\n";
    text += "# seed=" + std::to_string(ctx.seed) + "\n";
    for (const auto& [key, value] : extra) text += "# " + key + "=" + value + "\n";
    return text;
}

}  // namespace

void write_artifact_csv(const RunContext& ctx, const std::string& path, const Table& table,
                        const std::map<std::string, std::string>& extra_meta) {
    write_text_file(path, meta_block(ctx, extra_meta) + to_csv(table));
}

void write_artifact_kv(const RunContext& ctx, const std::string& path,
                       const std::vector<std::pair<std::string, double>>& values,
                       const std::map<std::string, std::string>& extra_meta) {
    std::string text = meta_block(ctx, extra_meta);
    for (const auto& [name, value] : values) text += name + " = " + format_double(value) + "\n";
    write_text_file(path, text);
}

std::vector<std::pair<std::string, double>> read_kv_file(const std::string& path) {
    const std::string text = read_text_file(path);
    std::vector<std::pair<std::string, double>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ": expected name = value", lineno, 1);
        out.emplace_back(trim(body.substr(0, eq)), parse_double(trim(body.substr(eq + 1))));
    }
    return out;
}

std::map<std::string, std::string> read_artifact_meta(const std::string& path) {
    const std::string text = read_text_file(path);
    std::map<std::string, std::string> meta;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() != '#') break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        meta[trim(line.substr(1, eq - 1))] = trim(line.substr(eq + 1));
    }
    return meta;
}

}  // namespace lumen::cli
