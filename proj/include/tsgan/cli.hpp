#pragma once

namespace tsgan::cli {

// Command-line entry point: parses `tsgan <subcommand> [flags]` and runs it.
// Returns the process exit code: 0 on success, 2 on usage errors, and a
// per-category code for domain errors (config 3, data 4, numeric 5, io 6).
// All side effects stay inside the subcommand's --out directory.
int run(int argc, const char* const* argv);

}  // namespace tsgan::cli
