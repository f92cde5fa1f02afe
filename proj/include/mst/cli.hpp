#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mst {

/// Exit codes: 0 success, 1 runtime failure (I/O, format, compatibility,
/// failed gradient check), 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `mst` command-line tool. Results go to `out`,
/// diagnostics to `err`. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mst
