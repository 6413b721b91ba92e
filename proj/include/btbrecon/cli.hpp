#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace btbrecon::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
    kComplete = 0, // success / fully determined inference
    kError = 1,    // usage, I/O or input errors
    kPartial = 2,  // infer: report has indeterminate or inconsistent fields
};

/// Runs `btbrecon <subcommand> ...`; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace btbrecon::cli
