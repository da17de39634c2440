#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrkd/distill.hpp"
#include "mrkd/features.hpp"
#include "mrkd/models.hpp"

namespace mrkd::cli {

struct BranchConfig {
  std::string id;
  features::FeatureConfig features;
  models::ModelConfig model;
  std::uint64_t seed = 0;
};

/// One experiment. Paths are absolute after loading.
struct RunConfig {
  std::filesystem::path source;  // config file, empty when built in code

  std::filesystem::path manifest;
  std::size_t canonical_length = audio::kCanonicalLength;
  double sample_rate = audio::kCanonicalRate;
  std::uint64_t seed = 0;

  std::vector<BranchConfig> branches;

  distill::TrainingOptions training;
  std::size_t batch_size = 64;
  int total_epochs = 150;

  int cycles = 75;
  int branch_epochs = 1;
  int distill_epochs = 1;
  double temperature = 2.0;
  int warmup_cycles = 0;

  std::filesystem::path work_dir;
  std::filesystem::path features_dir;  // empty: <work_dir>/features

  distill::DistillationSchedule schedule() const;
  std::filesystem::path feature_root() const;
  /// Seed actually used by branch i: mixes the run seed with the branch seed.
  std::uint64_t branch_seed(std::size_t i) const;
  /// Frames of a canonical-length window.
  std::size_t window_frames(std::size_t branch) const;
};

/// Raised with every violation found, one per line.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Relative paths resolve against base_dir.
RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::filesystem::path> work_dir;
  std::optional<std::uint64_t> seed;
  bool desk_scale = false;
};

/// Config file < desk-scale preset < explicit flags; MRKD_WORK_DIR is used
/// only when neither a flag nor the file names a work dir.
void apply_overrides(RunConfig& config, const Overrides& overrides, const char* env_work_dir);

/// All violations; empty when valid. check_paths also requires the manifest
/// to exist.
std::vector<std::string> validate(const RunConfig& config, bool check_paths);
void validate_or_throw(const RunConfig& config, bool check_paths);

/// Fully resolved config as TOML, for the work-dir echo.
std::string to_toml(const RunConfig& config);

/// Directory name of a branch's feature cache, e.g. "logmel64_c3".
std::string feature_dir_name(const features::FeatureConfig& config);

}  // namespace mrkd::cli
