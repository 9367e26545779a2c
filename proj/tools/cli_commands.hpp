#pragma once

#include <iosfwd>

namespace ssm::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2 };

/// Entry point of the `ssmkit` tool; streams are injectable for tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace ssm::cli
