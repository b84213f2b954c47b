#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace storyviz::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Parses argv (without the program name) and runs one command. Returns 0 on
// success, 1 on a usage or configuration error and 2 on a runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace storyviz::cli
