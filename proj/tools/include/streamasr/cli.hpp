#pragma once

#include <iosfwd>

namespace streamasr {

/// Process exit codes of the command line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,       ///< bad flags or malformed configuration
  kExitMissing = 3,     ///< an input file does not exist
  kExitFormat = 4,      ///< unreadable or corrupt file
  kExitMismatch = 5,    ///< files disagree with each other or with the config
  kExitNumeric = 6,     ///< training diverged
  kExitInternal = 70,
};

/// Entry point behind the `streamasr` executable. Subcommands: gen-data,
/// train-stage1, train-stage2, average, decode, evaluate, latency, config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace streamasr
