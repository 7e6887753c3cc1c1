#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace afp {

/// Exit codes: 0 success, 1 usage/configuration error, 2 data/format/I-O
/// error, 3 numerical failure.
enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Runs one `afpc` subcommand. args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace afp
