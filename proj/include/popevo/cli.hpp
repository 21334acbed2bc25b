#pragma once

#include <iosfwd>

namespace popevo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Parses argv and runs one subcommand: evolve, ablate, sweep, stats,
/// ensemble-eval, resume or serve-mock.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace popevo
