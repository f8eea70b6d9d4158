#pragma once

#include <string>
#include <vector>

namespace dpanet::cli {

enum ExitCode : int { kSuccess = 0, kValidation = 1, kIo = 2, kNumerical = 3 };

/// Parses the command line and runs one command; never throws.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace dpanet::cli
