#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hrmedseg {

// Runs one command line (without the program name). Usage errors print the
// help text to `err` and return 2; failed checks return 1.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace hrmedseg
