#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mrkd/data.hpp"
#include "mrkd/error.hpp"
#include "mrkd/rng.hpp"

namespace mrkd::data {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string class_name(std::size_t label) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", label);
  return buf;
}

// Paul Kellet's economy pink filter over white noise.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = b0 + b1 + b2 + w * 0.1848;
  }
  return out;
}

}  // namespace

double class_fundamental(std::size_t label) { return 180.0 * std::pow(1.22, static_cast<double>(label)); }

audio::AudioClip synth_clip(std::size_t label, std::uint64_t clip_seed, const SyntheticOptions& options) {
  std::mt19937_64 rng(clip_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double fs = options.sample_rate;
  const std::size_t n = options.clip_samples;
  const double duration = static_cast<double>(n) / fs;

  const double f0 = class_fundamental(label) * (1.0 + 0.06 * (unit(rng) - 0.5));
  const double slope = 0.25 + 0.35 * static_cast<double>(label % 5);
  const std::size_t envelope = label % 3;
  const double am_rate = 4.0 * (1.0 + 0.1 * (unit(rng) - 0.5));
  const double am_phase = kTwoPi * unit(rng);
  const double chirp_span = 0.12 + 0.06 * unit(rng);  // relative glide over the clip
  double phases[3];
  for (double& p : phases) p = kTwoPi * unit(rng);

  std::vector<double> tone(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    // phase of the fundamental in cycles; the chirp glides linearly in frequency
    double cycles = f0 * t;
    if (envelope == 2) cycles = f0 * (t + chirp_span * t * t / (2.0 * duration));
    double v = 0;
    for (int h = 1; h <= 3; ++h) {
      const double amp = std::pow(static_cast<double>(h), -slope);
      v += amp * std::sin(kTwoPi * h * cycles + phases[h - 1]);
    }
    if (envelope == 1) v *= 0.5 * (1.0 + 0.9 * std::sin(kTwoPi * am_rate * t + am_phase));
    tone[i] = v;
  }

  auto noise = pink_noise(n, rng);
  double p_sig = 0, p_noise = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p_sig += tone[i] * tone[i];
    p_noise += noise[i] * noise[i];
  }
  const double noise_gain = p_noise > 0 ? std::sqrt(p_sig / (p_noise * std::pow(10.0, options.snr_db / 10.0))) : 0.0;
  double peak = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tone[i] += noise_gain * noise[i];
    peak = std::max(peak, std::abs(tone[i]));
  }
  const double gain = (0.3 + 0.5 * unit(rng)) / std::max(peak, 1e-9);

  audio::AudioClip clip;
  clip.sample_rate = fs;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // quantise to the 16-bit grid so the in-memory clip equals its WAV file
    const double q = std::clamp(std::nearbyint(tone[i] * gain * 32768.0), -32768.0, 32767.0);
    clip.samples[i] = static_cast<float>(q / 32768.0);
  }
  return clip;
}

DatasetManifest gen_synthetic(const std::filesystem::path& out_dir, const SyntheticOptions& options) {
  if (options.n_classes < 2) fail(ErrorKind::kParameter, "gen_synthetic: n_classes must be >= 2");
  if (options.clips_per_class < 1) fail(ErrorKind::kParameter, "gen_synthetic: clips_per_class must be >= 1");
  if (class_fundamental(options.n_classes - 1) * 3 >= options.sample_rate / 2) {
    fail(ErrorKind::kParameter, "gen_synthetic: too many classes, harmonics would exceed Nyquist");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec) fail(ErrorKind::kIo, "gen_synthetic: cannot create " + (out_dir / "audio").string() + ": " + ec.message());

  const auto n_train = static_cast<std::size_t>(
      std::llround(options.train_fraction * static_cast<double>(options.clips_per_class)));
  std::mt19937_64 corrupt_rng(derive_seed({options.seed, 0xC044u}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DatasetManifest manifest;
  for (std::size_t c = 0; c < options.n_classes; ++c) manifest.class_names.push_back(class_name(c));
  for (std::size_t c = 0; c < options.n_classes; ++c) {
    const auto dir = out_dir / "audio" / class_name(c);
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::kIo, "gen_synthetic: cannot create " + dir.string());
    for (std::size_t i = 0; i < options.clips_per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "clip_%04zu.wav", i);
      audio::AudioClip clip = synth_clip(c, derive_seed({options.seed, c, i}), options);
      audio::write_wav(dir / file, clip);

      ManifestEntry e;
      e.raw_path = "audio/" + class_name(c) + "/" + file;
      e.path = out_dir / e.raw_path;
      e.split = i < n_train ? Split::kTrain : Split::kTest;
      e.label = c;
      if (e.split == Split::kTrain && options.label_corruption > 0 && unit(corrupt_rng) < options.label_corruption) {
        const auto shift = 1 + std::uniform_int_distribution<std::size_t>(0, options.n_classes - 2)(corrupt_rng);
        e.label = (c + shift) % options.n_classes;
      }
      e.label_name = class_name(e.label);
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> ids, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) fail(ErrorKind::kParameter, "batcher: batch_size must be >= 1");
  std::vector<std::size_t> order(ids.begin(), ids.end());
  std::mt19937_64 rng(derive_seed({seed, epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace mrkd::data
