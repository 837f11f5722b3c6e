#ifndef EPMC_CLI_HPP
#define EPMC_CLI_HPP

#include <string>
#include <vector>

namespace epmc {

/// Entry point behind the `epmc` binary; exposed so tests can drive the
/// verbs in-process. Returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace epmc

#endif
