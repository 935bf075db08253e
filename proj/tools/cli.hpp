#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace phantom::cli {

enum ExitCode : int { kOk = 0, kDataError = 1, kUsageError = 2, kDiverged = 3 };

/// Runs one command line (args[0] is the program name) against the given
/// streams and returns the process exit code. Never throws.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace phantom::cli
