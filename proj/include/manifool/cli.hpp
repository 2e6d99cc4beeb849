#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace manifool {

/// Process exit codes used by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitAlgorithmFailure = 1,  // attack failed, r_hat undefined
  kExitUsage = 2,
  kExitIo = 3,
};

/// Runs one command (`args[0]` is the command name: train, attack, eval-rho,
/// eval-curve, sample, finetune, distance). Results go to `out`, diagnostics
/// to `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace manifool
