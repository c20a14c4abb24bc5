#ifndef TRIALKIT_CLI_HPP
#define TRIALKIT_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace trialkit {

// Runs one command. args excludes the program name. Returns 0 on
// success, 1 on a usage error, 2 on a data or model error.
int run_cli(std::vector<std::string> args, std::ostream& out,
            std::ostream& err);

}  // namespace trialkit

#endif  // TRIALKIT_CLI_HPP
