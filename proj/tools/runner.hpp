#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gxr::cli {

std::vector<std::string> selectors();

/// Validates a config and prints the resolved plan. Returns the exit status.
int describe(const std::string& path, std::ostream& out, std::ostream& err);

/// Executes the selected experiment into a fresh run directory. Returns the exit status.
int run(const std::string& path, std::ostream& out, std::ostream& err);

}  // namespace gxr::cli
