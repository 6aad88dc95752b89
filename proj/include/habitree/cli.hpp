#pragma once

#include <ostream>

namespace habitree {

// Entry point of the `habitree` tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace habitree
