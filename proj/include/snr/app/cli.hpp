#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace snr::app {

// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitBadInput = 2,
  kExitDiverged = 3,
};

// Runs one command line (without the program name) and returns its exit code.
// Normal output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snr::app
