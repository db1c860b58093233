#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vgkit {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitTransport = 2;
inline constexpr int kExitPartialFailure = 3;

// Runs one `vgkit` invocation; args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Asks a running *-serve subcommand to shut down, as SIGINT/SIGTERM would.
void request_stop();

}  // namespace vgkit
