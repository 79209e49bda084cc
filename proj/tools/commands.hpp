#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mutan::cli {

enum ExitCode : int { exit_ok = 0, exit_tolerance = 1, exit_usage = 2, exit_io = 3 };

/// Seed used when --seed is absent: MUTAN_SEED if set, else 1. Returns
/// nullopt when MUTAN_SEED is set but not an unsigned integer.
std::optional<std::uint64_t> default_seed();

/// Runs one invocation; `args` excludes the program name. TSV goes to `out`,
/// the resolved config and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mutan::cli
