#pragma once

namespace scenegen {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of `scenegen <subcommand> ...`; never throws.
int run_cli(int argc, char** argv);

}  // namespace scenegen
