#pragma once

#include <iosfwd>

namespace topkfair {

/// Entry point of the `topkfair` tool. Returns 0 on success, 1 on usage or
/// validation errors, 2 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace topkfair
