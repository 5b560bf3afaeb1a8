#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fairgrpo::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitMissing = 4;
inline constexpr int kExitIncompatible = 5;

// Parses `args` (without the program name) and runs one subcommand. Results
// go to `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fairgrpo::cli
