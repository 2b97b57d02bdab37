#pragma once

namespace laconv {

// Subcommand dispatch for the laconvnet executable. Exit codes: 0 success,
// 2 usage error, 3 io error, 4 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace laconv
