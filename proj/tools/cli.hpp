#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ndgan::cli {

// Exit codes: 0 ok, 2 usage/config/input, 3 runtime failure (artifacts kept).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

// Entry point shared by the executable and the tests. args[0] is the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ndgan::cli
