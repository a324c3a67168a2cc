#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace siamlite {

/// Parses and runs one subcommand. Reports go to `out`, the resolved config
/// and diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace siamlite
