#pragma once

#include <iosfwd>

namespace cdk {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // evaluation produced a FAIL row, or an unclassified error
  kExitParse = 2,
  kExitIo = 3,
  kExitTransport = 4,
  kExitBudget = 5,
  kExitUsage = 64,
};

// Runs the `cdk` command line. CSV goes to out, diagnostics to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cdk
