#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrkd/audio_io.hpp"

namespace mrkd::features {

// Numeric values are the on-disk representation tag of the feature cache.
enum class Representation : std::uint8_t {
  kLogMel64 = 0,
  kLogMel128 = 1,
  kMfcc = 2,
  kCqt = 3,
};

std::string_view to_string(Representation rep);
Representation parse_representation(std::string_view name);

inline constexpr double kLogFloor = 1e-10;

/// channels x frames x bins, row-major. Channel order when three channels are
/// present is [static, delta, delta-delta].
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> data;
  Representation tag = Representation::kLogMel64;
  float hop_seconds = 0.0f;
  std::string clip_id;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t t, std::size_t f, Representation rep)
      : channels(c), frames(t), bins(f), data(c * t * f, 0.0f), tag(rep) {}

  std::size_t index(std::size_t c, std::size_t t, std::size_t f) const {
    return (c * frames + t) * bins + f;
  }
  float at(std::size_t c, std::size_t t, std::size_t f) const { return data[index(c, t, f)]; }
  float& at(std::size_t c, std::size_t t, std::size_t f) { return data[index(c, t, f)]; }

  /// Frames [offset, offset + count) of every channel.
  FeatureMap slice_frames(std::size_t offset, std::size_t count) const;
};

// ---------------------------------------------------------------------------
// STFT

enum class Window { kHann, kRectangular };

/// frames x bins complex spectrum, bins = frame_len / 2 + 1.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> values;

  std::complex<double> at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
};

std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop);

/// Periodic window of the given length.
std::vector<double> make_window(Window window, std::size_t length);

/// One-sided DFT of a real sequence (length n / 2 + 1). Backed by FFTW;
/// plans are created once per length and shared across threads.
std::vector<std::complex<double>> real_dft(std::span<const double> x);

Spectrogram stft(std::span<const float> samples, std::size_t frame_len, std::size_t hop,
                 Window window = Window::kHann);

// ---------------------------------------------------------------------------
// Mel filterbank

enum class MelScale { kSlaney, kHtk };

double hz_to_mel(double hz, MelScale scale = MelScale::kSlaney);
double mel_to_hz(double mel, MelScale scale = MelScale::kSlaney);

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_fft_bins = 0;
  double f_min = 0.0;
  double f_max = 0.0;
  double sample_rate = 0.0;
  std::vector<double> weights;     // n_mels x n_fft_bins
  std::vector<double> edges_hz;    // n_mels + 2 triangle corner frequencies
  // [first, last) nonzero bins of each band
  std::vector<std::pair<std::size_t, std::size_t>> support;

  double weight(std::size_t band, std::size_t bin) const { return weights[band * n_fft_bins + bin]; }
  double center_hz(std::size_t band) const { return edges_hz[band + 1]; }

  /// power: frames x n_fft_bins. Returns frames x n_mels.
  std::vector<double> apply(std::span<const double> power, std::size_t frames) const;
};

/// Triangular filters equally spaced on the mel scale, area normalised
/// (each triangle is scaled by 2 / bandwidth in Hz).
MelFilterbank build_mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels,
                                   double f_min, double f_max, MelScale scale = MelScale::kSlaney);

// ---------------------------------------------------------------------------
// Constant-Q kernel

struct CqtAtom {
  double center_hz = 0.0;
  double nominal_length = 0.0;  // Q * fs / f_k, in samples (not rounded)
  double bandwidth_hz = 0.0;    // fs / nominal_length
  std::vector<double> re;       // odd length, centred on the analysis instant
  std::vector<double> im;
};

struct CqtKernel {
  double f_min = 0.0;
  std::size_t bins_per_octave = 0;
  std::size_t n_bins = 0;
  double q = 0.0;
  double sample_rate = 0.0;
  std::vector<CqtAtom> atoms;
};

/// Atoms for f_k = f_min * 2^(k / bins_per_octave), Q = 1 / (2^(1/bpo) - 1).
/// Each atom is a Hann-windowed complex exponential normalised by its window sum.
CqtKernel build_cqt_kernel(double sample_rate, double f_min, std::size_t bins_per_octave,
                           std::size_t n_bins);

/// |<segment, atom>| for a segment centred on `center` (samples outside the
/// clip are zero).
double cqt_magnitude(std::span<const float> samples, std::ptrdiff_t center, const CqtAtom& atom);

// ---------------------------------------------------------------------------
// Deltas and DCT

/// Regression delta along time for a frames x bins array with edge
/// replication: d_t = sum n (c[t+n] - c[t-n]) / (2 sum n^2).
std::vector<double> delta(std::span<const double> values, std::size_t frames, std::size_t bins,
                          std::size_t half_window);

/// Orthonormal DCT-II basis, n_out rows of length n_in.
std::vector<double> dct2_matrix(std::size_t n_in, std::size_t n_out);

/// DCT-II of each frame of a frames x n_mels log-mel array, keeping the first
/// n_coeffs coefficients. The extractor stores the result as f32.
std::vector<double> cepstrum(std::span<const double> logmel, std::size_t frames, std::size_t n_mels,
                             std::size_t n_coeffs);

// ---------------------------------------------------------------------------
// Extraction

struct FeatureConfig {
  Representation representation = Representation::kLogMel64;
  std::size_t channels = 3;
  double sample_rate = audio::kCanonicalRate;
  std::size_t frame_len = 3528;  // 80 ms
  std::size_t hop = 441;         // 10 ms
  MelScale mel_scale = MelScale::kSlaney;
  double f_min = 0.0;
  double f_max = 0.0;            // 0 selects sample_rate / 2
  std::size_t mfcc_mels = 64;
  std::size_t n_mfcc = 40;
  double cqt_f_min = 32.70;
  std::size_t cqt_bins_per_octave = 12;
  std::size_t cqt_bins = 84;
  std::size_t delta_half_window = 4;  // window of 9 frames

  static FeatureConfig defaults_for(Representation rep);
  std::size_t n_mels() const;
  std::size_t n_bins() const;
  double effective_f_max() const { return f_max > 0 ? f_max : sample_rate / 2; }
  void validate() const;
};

/// Holds the precomputed filterbank / DCT / CQT kernel for one config.
/// Immutable after construction and safe to share across threads.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig config);

  const FeatureConfig& config() const { return config_; }

  /// Static representation (1 channel), log compressed.
  FeatureMap static_features(const audio::AudioClip& clip) const;

  /// Static representation with delta channels if config().channels == 3.
  FeatureMap operator()(const audio::AudioClip& clip) const;

  const MelFilterbank& filterbank() const { return filterbank_; }
  const CqtKernel& cqt_kernel() const { return cqt_kernel_; }

 private:
  FeatureMap logmel_map(const audio::AudioClip& clip, std::size_t n_mels) const;

  FeatureConfig config_;
  MelFilterbank filterbank_;
  CqtKernel cqt_kernel_;
};

FeatureMap logmel(const audio::AudioClip& clip, const FeatureConfig& cfg);
FeatureMap mfcc(const audio::AudioClip& clip, const FeatureConfig& cfg);
FeatureMap cqt(const audio::AudioClip& clip, const FeatureConfig& cfg);

/// Appends delta and delta-delta channels to a single-channel map.
FeatureMap stack_deltas(const FeatureMap& static_map, std::size_t half_window);

// ---------------------------------------------------------------------------
// Standardisation

/// Per (channel, bin) mean and inverse standard deviation over all frames of
/// a training set.
struct Standardizer {
  std::size_t channels = 0;
  std::size_t bins = 0;
  std::vector<float> mean;
  std::vector<float> inv_std;

  static Standardizer fit(std::span<const FeatureMap> maps);
  void apply(FeatureMap& fm) const;

  FeatureMap to_map(Representation tag) const;
  static Standardizer from_map(const FeatureMap& fm);
};

// ---------------------------------------------------------------------------
// Cache file

inline constexpr std::size_t kCacheHeaderBytes = 32;
inline constexpr std::uint16_t kCacheVersion = 1;

std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, std::string clip_id = {});

/// Writes to a sibling temporary file and renames it into place.
void cache_write(const FeatureMap& fm, const std::filesystem::path& path);
FeatureMap cache_read(const std::filesystem::path& path);

}  // namespace mrkd::features
