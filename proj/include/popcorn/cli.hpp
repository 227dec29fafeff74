#pragma once

namespace popcorn {

// Entry point for the command-line tool: parses argv, dispatches to the
// subcommands (synth-data, train, select, evaluate, report), and maps
// exceptions to exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 runtime failure.
int cli_main(int argc, char** argv);

}  // namespace popcorn
