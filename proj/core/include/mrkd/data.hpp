#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrkd/audio_io.hpp"

namespace mrkd::data {

enum class Split { kTrain, kTest, kVal };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest directory
  std::string raw_path;        // as written in the CSV
  std::string label_name;
  std::size_t label = 0;
  Split split = Split::kTrain;
};

/// Rows in file order. Class indices follow sorted class-name order.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  std::size_t n_classes() const { return class_names.size(); }
  /// Row indices of one split, in manifest order. This order is the row
  /// order of every soft-label matrix built over that split.
  std::vector<std::size_t> indices(Split split) const;
};

/// Parses `path,label[,split]` CSV text. Relative paths resolve against base_dir.
DatasetManifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// ---------------------------------------------------------------------------

struct SyntheticOptions {
  std::size_t n_classes = 10;
  std::size_t clips_per_class = 100;
  std::uint64_t seed = 7;
  std::size_t clip_samples = audio::kCanonicalLength;
  double sample_rate = audio::kCanonicalRate;
  double snr_db = 10.0;
  double train_fraction = 0.8;
  double label_corruption = 0.0;  // fraction of train rows given a wrong label
};

/// Fundamental of class c: 180 * 1.22^c Hz.
double class_fundamental(std::size_t label);

/// One clip of class `label`: three harmonics with a class-specific spectral
/// slope, a class-specific envelope (steady / 4 Hz AM / linear chirp by
/// label mod 3) and pink-ish noise at the configured SNR.
audio::AudioClip synth_clip(std::size_t label, std::uint64_t clip_seed, const SyntheticOptions& options);

/// Writes WAVs under out_dir/audio/ and out_dir/manifest.csv; returns the manifest.
DatasetManifest gen_synthetic(const std::filesystem::path& out_dir, const SyntheticOptions& options);

// ---------------------------------------------------------------------------

/// Seeded shuffle keyed by (seed, epoch), chunked into batches; the final
/// partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> ids, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch);

}  // namespace mrkd::data
