#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "instlab/config.hpp"
#include "instlab/report.hpp"

namespace instlab {

inline constexpr int kExitPass = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

inline constexpr const char* kArtifactVersion = "1.0.0";

const std::vector<std::string>& verify_targets();

/// Runs one verification target on the configured environment. Unknown
/// targets and out-of-range parameters raise ConfigError.
VerificationReport verify_target(const std::string& target, const RunConfig& cfg);

struct CommandOutcome {
    int exit_code = kExitPass;
    nlohmann::json summary = nlohmann::json::object();
    std::vector<std::string> outputs;  // file names inside the output directory
};

/// Runs verify | train | evaluate | continual | dump-model | dump-tree, writes
/// its outputs into `out` and records them in `out/run.json`. `target` names
/// the verification for `verify` and is ignored otherwise.
CommandOutcome run_command(const std::string& command, const std::string& target, RunConfig cfg,
                           const std::filesystem::path& out);

/// Re-runs the command recorded in a manifest into `out` and compares every
/// output byte for byte; exit 1 on any difference. `workers` > 0 replaces the
/// recorded worker count, which must not change any output.
CommandOutcome replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out,
                               std::size_t workers = 0);

/// 64-bit FNV-1a, hex encoded.
std::string content_hash(std::string_view bytes);

/// Writes through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace instlab
