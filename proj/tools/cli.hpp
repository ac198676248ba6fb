#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lieop::cli {

enum ExitCode { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

/// Runs one command line (without the program name). Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lieop::cli
