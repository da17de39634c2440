#include <cmath>
#include <numbers>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {

std::vector<double> delta(std::span<const double> values, std::size_t frames, std::size_t bins,
                          std::size_t half_window) {
  if (half_window < 1) fail(ErrorKind::kParameter, "delta: half_window must be >= 1");
  if (frames < 1) fail(ErrorKind::kInvalidInput, "delta: time dimension must be >= 1");
  if (values.size() != frames * bins) {
    fail(ErrorKind::kShape, "delta: expected " + std::to_string(frames * bins) + " values, got " +
                                std::to_string(values.size()));
  }
  double denom = 0.0;
  for (std::size_t n = 1; n <= half_window; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;

  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  auto clamp = [last](std::ptrdiff_t t) { return t < 0 ? 0 : (t > last ? last : t); };

  std::vector<double> out(values.size(), 0.0);
  for (std::ptrdiff_t t = 0; t <= last; ++t) {
    double* dst = out.data() + static_cast<std::size_t>(t) * bins;
    for (std::size_t n = 1; n <= half_window; ++n) {
      const auto sn = static_cast<std::ptrdiff_t>(n);
      const double* ahead = values.data() + static_cast<std::size_t>(clamp(t + sn)) * bins;
      const double* behind = values.data() + static_cast<std::size_t>(clamp(t - sn)) * bins;
      const auto weight = static_cast<double>(n);
      for (std::size_t f = 0; f < bins; ++f) dst[f] += weight * (ahead[f] - behind[f]);
    }
    for (std::size_t f = 0; f < bins; ++f) dst[f] /= denom;
  }
  return out;
}

std::vector<double> dct2_matrix(std::size_t n_in, std::size_t n_out) {
  if (n_out > n_in) fail(ErrorKind::kParameter, "dct: n_out must not exceed n_in");
  std::vector<double> m(n_out * n_in);
  const auto n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i) {
      m[k * n_in + i] = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                         (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
  }
  return m;
}

std::vector<double> cepstrum(std::span<const double> logmel, std::size_t frames, std::size_t n_mels,
                             std::size_t n_coeffs) {
  if (logmel.size() != frames * n_mels) {
    fail(ErrorKind::kShape, "cepstrum: expected " + std::to_string(frames * n_mels) + " values, got " +
                                std::to_string(logmel.size()));
  }
  const std::vector<double> basis = dct2_matrix(n_mels, n_coeffs);
  std::vector<double> out(frames * n_coeffs);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = logmel.data() + t * n_mels;
    for (std::size_t k = 0; k < n_coeffs; ++k) {
      const double* b = basis.data() + k * n_mels;
      double acc = 0.0;
      for (std::size_t m = 0; m < n_mels; ++m) acc += b[m] * row[m];
      out[t * n_coeffs + k] = acc;
    }
  }
  return out;
}

}  // namespace mrkd::features
