#pragma once

#include <string>
#include <vector>

namespace confroute::cli {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on data errors, 2 on usage errors.
int run(std::vector<std::string> args);

}  // namespace confroute::cli
