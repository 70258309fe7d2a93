#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ci4gi::cli {

enum ExitCode : int { kOk = 0, kValidationError = 1, kRuntimeFailure = 2 };

// args excludes the program name. Normal output goes to `out`, logs to stderr.
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace ci4gi::cli
