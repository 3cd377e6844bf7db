#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace poolnas::cli {

/// Default output directory for `search` when neither file nor flag sets one.
inline constexpr const char* kOutputEnv = "POOLNAS_OUTPUT_DIR";

/// Subcommands: enumerate, search, rank, gradcheck, correlate. Returns the
/// process exit code; results go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace poolnas::cli
