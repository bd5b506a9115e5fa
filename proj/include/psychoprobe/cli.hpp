#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace psychoprobe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitPartial = 2;

// Subcommands: simulate, administer, parse, score, analyze, report. Returns the
// process exit code; results go to files under --out, summaries to `out`,
// diagnostics and log lines to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace psychoprobe
