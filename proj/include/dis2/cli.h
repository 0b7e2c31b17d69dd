#pragma once

#include <string>
#include <vector>

namespace dis2 {

/// Exit codes: 0 ok, 1 runtime failure, 2 usage / config / missing input,
/// 3 training aborted on a non-finite loss.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNonFinite = 3;

/// Environment variable that overrides the config's output_dir (the
/// --output-dir flag still wins).
inline constexpr const char* kOutputRootEnv = "DIS2_OUTPUT_ROOT";

/// Subcommands: train, eval, diagnose, viz, synth-data.
int cli_main(int argc, char** argv);
/// Same, with argv[0] omitted.
int cli_main(const std::vector<std::string>& args);

}  // namespace dis2
