#pragma once

#include <string>
#include <vector>

namespace cirnet::cli {

// Entry point behind main(). Subcommands: generate, train, infer, eval,
// grad-check. Exit codes: 0 ok, 2 bad config or arguments, 3 missing or
// unreadable files, 4 non-finite loss, 5 failed gradient check, 1 anything
// else.
int run(int argc, char** argv);

// Same, for callers holding arguments without the program name.
int run(const std::vector<std::string>& args);

}  // namespace cirnet::cli
