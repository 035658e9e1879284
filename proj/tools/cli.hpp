#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace expanse::cli {

/// Runs the `expanse` command line with argv-style arguments (args[0] is the
/// program name). Results go to the files named by --out; a one-line JSON
/// summary goes to `out`, and failures print {"error": {...}} to `err`.
/// Returns the process exit code: 0 success, 1 runtime failure, 2 usage or
/// configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace expanse::cli
