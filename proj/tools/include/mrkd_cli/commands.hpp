#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mrkd/data.hpp"
#include "mrkd/distill.hpp"
#include "mrkd_cli/config.hpp"

namespace mrkd::cli {

/// Exit codes: 0 ok, 1 unexpected, 2 usage or config, 3 missing
/// prerequisite, 4 bad input data, 5 numeric failure, 6 I/O.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitPrerequisite = 3,
  kExitData = 4,
  kExitNumeric = 5,
  kExitIo = 6,
};

int exit_code_for(ErrorKind kind);

/// Parses argv, runs one subcommand and returns the exit code. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// File-name-safe key of a manifest row: its relative path with separators
/// replaced and the extension dropped.
std::string clip_key(const data::ManifestEntry& entry);

std::filesystem::path feature_dir(const RunConfig& config, std::size_t branch);
std::filesystem::path cache_path(const RunConfig& config, std::size_t branch, const data::ManifestEntry& entry);
std::filesystem::path standardizer_path(const RunConfig& config, std::size_t branch);
std::filesystem::path checkpoint_path(const RunConfig& config, const std::string& source, std::size_t branch);

/// Decodes, resamples to the configured rate.
audio::AudioClip load_clip(const RunConfig& config, const data::ManifestEntry& entry);

/// Standardised cached features of the train split for one branch.
distill::FeatureSet load_feature_set(const RunConfig& config, std::size_t branch,
                                     const data::DatasetManifest& manifest);

}  // namespace mrkd::cli
