#pragma once

namespace tcprune {

// Subcommand front door: gen-data, train-base, prune, eval, report, compare.
// Returns the process exit code (0 ok, 1 runtime failure, 2 usage, 3 config).
int dispatch(int argc, const char* const* argv);

}  // namespace tcprune
