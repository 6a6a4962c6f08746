#pragma once

// Command surface: sphereflow train|score|eval|synth|curate.
//
// Exit codes: 0 success, 2 input errors, 3 numeric failures, 4 internal.
// Failures print exactly one "error: <category>: <message>" line on stderr.

#include <string>
#include <vector>

#include "sphereflow/error.hpp"

namespace sphereflow::cli {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitInternal = 4;

int exit_code(ErrorKind kind);

/// args[0] is the program name.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace sphereflow::cli
