#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace surf {

// Entry point of the `surf` tool. Returns 0 on success, 1 for invalid input
// and 2 for runtime or numerical failures; errors name the module.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace surf
