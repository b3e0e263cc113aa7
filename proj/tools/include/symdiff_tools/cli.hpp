#pragma once

#include <ostream>

namespace symdiff::tools {

// Entry point of the `symdiff` command. Machine-readable summaries go to
// `out`; failures are reported on `err` as {"error": {"kind", "message"}}.
// Returns 0 on success, 1 on runtime errors and 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace symdiff::tools
