#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace inrprop::cli {

enum ExitCode : int { kOk = 0, kInput = 2, kDivergence = 3, kInternal = 4 };

/// Runs one command line (without the program name). Machine output goes to
/// `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace inrprop::cli
