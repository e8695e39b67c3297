#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace scob::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one subcommand (render, pretrain, eval, bench-render,
/// dump-embeddings). `args` excludes the program name. Returns the exit code;
/// diagnostics go to `err`, results and help to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scob::cli
