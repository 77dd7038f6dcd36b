#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clp::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

// Runs one command. `args` excludes the program name. Everything the command
// prints goes to `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clp::cli
