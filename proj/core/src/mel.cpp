#include <algorithm>
#include <cmath>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {
namespace {

constexpr double kSlaneyLinearStep = 200.0 / 3.0;  // Hz per mel below 1 kHz
constexpr double kSlaneyBreakHz = 1000.0;
constexpr double kSlaneyBreakMel = kSlaneyBreakHz / kSlaneyLinearStep;

double slaney_log_step() { return std::log(6.4) / 27.0; }

}  // namespace

double hz_to_mel(double hz, MelScale scale) {
  if (scale == MelScale::kHtk) return 2595.0 * std::log10(1.0 + hz / 700.0);
  if (hz < kSlaneyBreakHz) return hz / kSlaneyLinearStep;
  return kSlaneyBreakMel + std::log(hz / kSlaneyBreakHz) / slaney_log_step();
}

double mel_to_hz(double mel, MelScale scale) {
  if (scale == MelScale::kHtk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  if (mel < kSlaneyBreakMel) return mel * kSlaneyLinearStep;
  return kSlaneyBreakHz * std::exp(slaney_log_step() * (mel - kSlaneyBreakMel));
}

MelFilterbank build_mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels,
                                   double f_min, double f_max, MelScale scale) {
  if (!(sample_rate > 0)) fail(ErrorKind::kParameter, "mel filterbank: sample_rate must be > 0");
  if (n_fft < 2) fail(ErrorKind::kParameter, "mel filterbank: n_fft must be >= 2");
  if (n_mels < 2) fail(ErrorKind::kParameter, "mel filterbank: n_mels must be >= 2");
  if (!(f_min >= 0 && f_min < f_max && f_max <= sample_rate / 2)) {
    fail(ErrorKind::kParameter, "mel filterbank: require 0 <= f_min < f_max <= sample_rate/2 (got " +
                                    std::to_string(f_min) + ", " + std::to_string(f_max) + ")");
  }

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_fft_bins = n_fft / 2 + 1;
  fb.f_min = f_min;
  fb.f_max = f_max;
  fb.sample_rate = sample_rate;
  fb.weights.assign(n_mels * fb.n_fft_bins, 0.0);

  const double mel_lo = hz_to_mel(f_min, scale);
  const double mel_hi = hz_to_mel(f_max, scale);
  fb.edges_hz.resize(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(n_mels + 1);
    fb.edges_hz[i] = mel_to_hz(mel, scale);
  }

  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = fb.edges_hz[m];
    const double mid = fb.edges_hz[m + 1];
    const double hi = fb.edges_hz[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < fb.n_fft_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double rising = (f - lo) / (mid - lo);
      const double falling = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rising, falling));
      fb.weights[m * fb.n_fft_bins + k] = w * norm;
    }
  }
  fb.support.resize(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double* row = fb.weights.data() + m * fb.n_fft_bins;
    std::size_t first = 0;
    while (first < fb.n_fft_bins && row[first] == 0.0) ++first;
    std::size_t last = fb.n_fft_bins;
    while (last > first && row[last - 1] == 0.0) --last;
    fb.support[m] = {first, last};
  }
  return fb;
}

std::vector<double> MelFilterbank::apply(std::span<const double> power, std::size_t frames) const {
  if (power.size() != frames * n_fft_bins) {
    fail(ErrorKind::kShape, "mel filterbank: power spectrum has " + std::to_string(power.size()) +
                                " values, expected " + std::to_string(frames * n_fft_bins));
  }
  std::vector<double> out(frames * n_mels, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* p = power.data() + t * n_fft_bins;
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double* w = weights.data() + m * n_fft_bins;
      const auto [first, last] = support[m];
      double acc = 0.0;
      for (std::size_t k = first; k < last; ++k) acc += w[k] * p[k];
      out[t * n_mels + m] = acc;
    }
  }
  return out;
}

}  // namespace mrkd::features
