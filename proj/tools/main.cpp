#include <cstdio>

#include "commands.hpp"

namespace {

using lumen::cli::RunContext;

struct Subcommand {
    const char* name;
    const char* help;
    int (*run)(RunContext&);
    void (*wire)(CLI::App*, RunContext&);
};

constexpr Subcommand kSubcommands[] = {
    {"simulate", "Solve a netlist to its periodic cycle and extract biomarkers",
     lumen::cli::cmd_simulate, lumen::cli::wire_simulate},
    {"dataset", "Sample a design and solve the model per row into a CSV dataset",
     lumen::cli::cmd_dataset, lumen::cli::wire_dataset},
    {"train", "Fit a metamodel (ffnn | pce | gp | gru) on a dataset", lumen::cli::cmd_train,
     lumen::cli::wire_train},
    {"evaluate", "Score a trained metamodel on a dataset (Q2 per output)",
     lumen::cli::cmd_evaluate, lumen::cli::wire_evaluate},
    {"sobol", "Variance-based sensitivity indices (Monte Carlo or PCE-analytic)",
     lumen::cli::cmd_sobol, lumen::cli::wire_sobol},
    {"morris", "Morris elementary-effects screening", lumen::cli::cmd_morris,
     lumen::cli::wire_morris},
    {"estimate", "Estimate model inputs from target output values", lumen::cli::cmd_estimate,
     lumen::cli::wire_estimate},
    {"uq", "Two-step uncertainty quantification (inverse sampling + forward prediction)",
     lumen::cli::cmd_uq, lumen::cli::wire_uq},
    {"report", "Summarize evaluation and sensitivity artifacts into one report",
     lumen::cli::cmd_report, lumen::cli::wire_report},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lumen: lumped cardiovascular model simulation and metamodeling pipeline"};
    app.require_subcommand(1);
    RunContext ctx;
    int rc = 0;
    for (const auto& sub : kSubcommands) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        lumen::cli::wire_common(cmd, ctx);
        sub.wire(cmd, ctx);
        cmd->callback([&ctx, &rc, run = sub.run] { rc = run(ctx); });
    }

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const lumen::ParseError& e) {
        std::fprintf(stderr, "error (parse): %s\n", e.what());
        return 2;
    } catch (const lumen::SolverError& e) {
        std::fprintf(stderr, "error (solver): %s\n", e.what());
        return 3;
    } catch (const lumen::StaleArtifactError& e) {
        std::fprintf(stderr, "error (stale artifact): %s\n", e.what());
        return 5;
    } catch (const lumen::IoError& e) {
        std::fprintf(stderr, "error (io): %s\n", e.what());
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error (config): %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
