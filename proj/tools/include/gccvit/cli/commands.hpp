#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gccvit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses `args` (without the program name) and runs the chosen subcommand.
/// Returns 0 on success, 1 on internal or numeric failure, 2 on usage or input errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gccvit::cli
