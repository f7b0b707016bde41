#include "commands.hpp"

// Temporary bodies for subcommands whose modules are not wired yet.

namespace lumen::cli {

namespace {
[[noreturn]] int todo(const char* name) { throw Error(std::string(name) + ": not implemented yet"); }
}  // namespace

int cmd_train(RunContext&) { todo("train"); }
int cmd_evaluate(RunContext&) { todo("evaluate"); }
int cmd_sobol(RunContext&) { todo("sobol"); }
int cmd_morris(RunContext&) { todo("morris"); }
int cmd_estimate(RunContext&) { todo("estimate"); }
int cmd_uq(RunContext&) { todo("uq"); }
int cmd_report(RunContext&) { todo("report"); }

void wire_train(CLI::App*, RunContext&) {}
void wire_evaluate(CLI::App*, RunContext&) {}
void wire_sobol(CLI::App*, RunContext&) {}
void wire_morris(CLI::App*, RunContext&) {}
void wire_estimate(CLI::App*, RunContext&) {}
void wire_uq(CLI::App*, RunContext&) {}
void wire_report(CLI::App*, RunContext&) {}

}  // namespace lumen::cli
