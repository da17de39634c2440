#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mrkd/audio_io.hpp"
#include "mrkd/features.hpp"
#include "mrkd/models.hpp"

namespace mrkd::eval {

struct MetricsReport {
  double accuracy = 0.0;
  double map_at_3 = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
  std::size_t n_evaluated = 0;
};

/// Labels sorted by descending score; equal scores keep ascending class order.
std::vector<std::size_t> rank_labels(std::span<const double> scores);
std::size_t argmax(std::span<const double> scores);

/// Mean over samples of 1/rank when the truth is within the first k entries.
/// Each ranking needs at least k distinct labels.
double map_at_k(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths,
                std::size_t k = 3);

double accuracy(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths);

MetricsReport evaluate_probabilities(std::span<const std::vector<double>> probabilities,
                                     std::span<const std::size_t> truths, std::size_t n_classes);

/// Everything needed to turn raw audio into model input for one branch.
struct ClipScorer {
  models::Model<float>* model = nullptr;
  const features::FeatureExtractor* extractor = nullptr;
  const features::Standardizer* standardizer = nullptr;
  std::size_t window_samples = audio::kCanonicalLength;
};

/// Consecutive windows of window_samples (no overlap); a shorter remainder,
/// or a clip shorter than one window, is tiled up to full length.
std::vector<audio::AudioClip> split_windows(const audio::AudioClip& clip, std::size_t window_samples);

/// Window-level logits, one row per window (eval mode).
std::vector<std::vector<float>> window_logits(const ClipScorer& scorer, const audio::AudioClip& clip);

/// Audio-level probabilities: softmax (T = 1) per window, averaged over windows.
std::vector<double> clip_probability(const ClipScorer& scorer, const audio::AudioClip& clip);

/// Mean of window logits.
std::vector<float> clip_logits(const ClipScorer& scorer, const audio::AudioClip& clip);

/// Forward pass for a batch of already standardised maps of equal shape.
std::vector<std::vector<float>> batch_logits(models::Model<float>& model,
                                             std::span<const features::FeatureMap* const> maps);

void write_report_text(std::ostream& out, const MetricsReport& report, const std::string& name);
void write_report_csv(std::ostream& out, const MetricsReport& report, const std::string& name);

struct LogitsRow {
  std::string clip_id;
  std::size_t label = 0;
  std::vector<float> logits;
};

/// Header `clip_id,label,logit_0..logit_{M-1}`; floats printed with 9
/// significant digits so they parse back to the same f32.
void write_logits_csv(const std::filesystem::path& path, std::span<const LogitsRow> rows);
std::vector<LogitsRow> read_logits_csv(const std::filesystem::path& path);

}  // namespace mrkd::eval
