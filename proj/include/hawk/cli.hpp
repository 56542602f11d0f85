#pragma once

#include <string>
#include <vector>

namespace hawk {

// Dispatches one CLI invocation; args exclude the program name. Returns the
// process exit code: 0 success, 1 runtime/compute failure, 2 usage or input
// validation failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace hawk
