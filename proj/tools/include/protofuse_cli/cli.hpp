#pragma once

#include <iosfwd>

namespace protofuse::cli {

// Subcommands: synth, train, eval, sweep, explain, gradcheck.
// Returns 0 on success, 2 on a configuration or usage error, 1 otherwise.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace protofuse::cli
