#pragma once

namespace tss::cli {

// Parses arguments, runs one subcommand and returns the process exit code:
// 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
int run(int argc, char** argv);

}  // namespace tss::cli
