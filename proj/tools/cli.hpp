// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace dyconv::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kDiverged = 3 };

/// Runs one `dyconv` command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dyconv::cli
