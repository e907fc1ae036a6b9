#pragma once

#include <string>
#include <vector>

namespace attngeo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitInconclusive = 3;

// Subcommands: analyze, classify, synth, compare, report, validate.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace attngeo::cli
