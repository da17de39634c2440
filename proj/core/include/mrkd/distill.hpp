#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mrkd/autodiff/losses.hpp"
#include "mrkd/autodiff/optim.hpp"
#include "mrkd/eval.hpp"
#include "mrkd/features.hpp"
#include "mrkd/models.hpp"

namespace mrkd::distill {

struct DistillationSchedule {
  int cycles = 20;          // Q
  int branch_epochs = 1;    // b
  int distill_epochs = 1;   // d
  double temperature = 2.0;
  std::size_t batch_size = 64;
  int total_epoch_budget = 40;
  int warmup_cycles = 0;    // cycles whose distill epochs use L_ce only

  int total_epochs() const { return cycles * (branch_epochs + distill_epochs); }
  /// Q, b, d >= 1 and Q (b + d) <= budget. Tests may lower b or d to 0 with
  /// allow_empty_phases.
  void validate(bool allow_empty_phases = false) const;
};

struct TrainingOptions {
  double base_lr = 0.001;
  double momentum = 0.9;
  bool mixup = true;
  double mixup_alpha = 0.2;
  ad::KlDirection kl_direction = ad::KlDirection::kForward;
  bool kl_t2_scaling = false;
  /// Run batch norm in inference mode during distill epochs. Off in normal
  /// runs; used to isolate the self-teaching check.
  bool freeze_bn_in_distill = false;
};

struct BranchSpec {
  std::string branch_id;
  features::Representation representation = features::Representation::kLogMel64;
  models::ModelConfig model;
  std::uint64_t seed = 0;
};

/// Standardised training features of one representation, rows in manifest
/// order of the train split.
struct FeatureSet {
  std::vector<features::FeatureMap> maps;
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;
  std::size_t window_frames = 143;

  std::size_t size() const { return maps.size(); }
  void validate() const;
};

/// `count` frames starting at `offset`, wrapping around for short maps.
features::FeatureMap crop_frames(const features::FeatureMap& map, std::size_t offset, std::size_t count);
std::size_t center_offset(std::size_t frames, std::size_t count);

class Branch {
 public:
  Branch(BranchSpec spec, const TrainingOptions& options, int total_epochs);

  const BranchSpec& spec() const { return spec_; }
  models::Model<float>& model() { return *model_; }
  const models::Model<float>& model() const { return *model_; }
  ad::Sgd<float>& optimizer() { return optimizer_; }
  const ad::Sgd<float>& optimizer() const { return optimizer_; }

  /// Model state plus optimizer epoch and momentum buffers.
  ad::NamedTensors state();
  void load_state(const ad::NamedTensors& entries);

 private:
  BranchSpec spec_;
  std::unique_ptr<models::Model<float>> model_;
  ad::Sgd<float> optimizer_;
};

enum class Phase { kBranch, kFuse, kDistill, kTrain };
std::string_view to_string(Phase phase);

struct EpochRecord {
  int cycle = 0;
  Phase phase = Phase::kBranch;
  std::string branch_id;
  int epoch = 0;  // 1-based optimizer epoch of the branch
  double l_ce = 0, l_kl = 0, l_d = 0;
  double lr = 0;
  double wall_ms = 0;
  std::vector<ad::LossValues<float>> batches;
};

struct SoftLabelMatrix {
  ad::Tensor<float> values;  // N x M
  double temperature = 1.0;
  int cycle = 0;
  std::string branch_id;
};

struct AggregatedTeacher {
  ad::Tensor<float> values;  // N x M
  double temperature = 1.0;
  int cycle = 0;
  std::size_t contributing_branches = 0;
};

/// `epochs` epochs of L_ce training with mixup on random crops.
std::vector<EpochRecord> train_branch_phase(Branch& branch, const FeatureSet& data, int epochs,
                                            const DistillationSchedule& schedule, const TrainingOptions& options,
                                            int cycle, Phase tag = Phase::kBranch);

/// Eval-mode forward on centre crops of every training row, softened at T.
SoftLabelMatrix compute_soft_labels(Branch& branch, const FeatureSet& data, double temperature, int cycle);

AggregatedTeacher aggregate(std::span<const SoftLabelMatrix> soft_labels);

/// `epochs` epochs of L_d = L_ce + L_kl against a fixed teacher. With
/// use_kl = false the KL term is dropped (warm-up cycles).
std::vector<EpochRecord> distill_phase(Branch& branch, const FeatureSet& data, const AggregatedTeacher& teacher,
                                       int epochs, const DistillationSchedule& schedule,
                                       const TrainingOptions& options, int cycle, bool use_kl = true);

struct RunOptions {
  std::size_t workers = 1;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  bool dump_soft_labels = false;
  std::function<void(const EpochRecord&)> on_record;
};

struct TrainingLog {
  std::vector<EpochRecord> records;
  std::size_t checkpoints_written = 0;
};

/// Cyclic branch / fuse / distill loop. data[i] feeds branches[i].
TrainingLog run_cycles(std::vector<Branch>& branches, std::span<const FeatureSet* const> data,
                       const DistillationSchedule& schedule, const TrainingOptions& options,
                       const RunOptions& run = {});

/// Independent baseline with the same epoch budget as run_cycles.
TrainingLog train_independent(std::vector<Branch>& branches, std::span<const FeatureSet* const> data,
                              const DistillationSchedule& schedule, const TrainingOptions& options,
                              const RunOptions& run = {});

std::filesystem::path phase_checkpoint_path(const std::filesystem::path& dir, const std::string& branch_id,
                                            int cycle, Phase phase);

/// Tab separated, header line first; "-" marks fields that do not apply.
void write_log_header(std::ostream& out);
void write_log_record(std::ostream& out, const EpochRecord& record);
std::vector<EpochRecord> parse_log(std::istream& in);

/// Soft-label matrices reuse the feature-cache layout with dims 1 x N x M
/// and the temperature in the hop field.
features::FeatureMap soft_labels_as_map(const ad::Tensor<float>& values, double temperature);

struct EnsemblePrediction {
  std::vector<double> probabilities;
  std::size_t label = 0;
};

/// Arithmetic mean of per-branch probabilities; ties go to the lowest index.
EnsemblePrediction ensemble_mean(std::span<const std::vector<double>> probabilities);
EnsemblePrediction ensemble_predict(std::span<const eval::ClipScorer> branches, const audio::AudioClip& clip);

}  // namespace mrkd::distill
