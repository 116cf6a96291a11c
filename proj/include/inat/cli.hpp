#pragma once

#include <string>
#include <vector>

namespace inat {

// Full command-line surface. Returns the process exit code: 0 success,
// 1 usage error, 2 runtime error.
int run_cli(const std::vector<std::string>& args);

}  // namespace inat
