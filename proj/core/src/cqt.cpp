#include <cmath>
#include <numbers>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {

CqtKernel build_cqt_kernel(double sample_rate, double f_min, std::size_t bins_per_octave,
                           std::size_t n_bins) {
  if (!(sample_rate > 0) || !(f_min > 0) || bins_per_octave == 0 || n_bins == 0) {
    fail(ErrorKind::kParameter, "cqt: sample_rate, f_min, bins_per_octave and n_bins must be positive");
  }
  const double top = f_min * std::exp2(static_cast<double>(n_bins) / static_cast<double>(bins_per_octave));
  if (top > sample_rate / 2) {
    fail(ErrorKind::kParameter, "cqt: f_min * 2^(n_bins/bins_per_octave) = " + std::to_string(top) +
                                    " Hz exceeds Nyquist " + std::to_string(sample_rate / 2) + " Hz");
  }

  CqtKernel kernel;
  kernel.f_min = f_min;
  kernel.bins_per_octave = bins_per_octave;
  kernel.n_bins = n_bins;
  kernel.sample_rate = sample_rate;
  kernel.q = 1.0 / (std::exp2(1.0 / static_cast<double>(bins_per_octave)) - 1.0);
  kernel.atoms.resize(n_bins);

  for (std::size_t k = 0; k < n_bins; ++k) {
    CqtAtom& atom = kernel.atoms[k];
    atom.center_hz = f_min * std::exp2(static_cast<double>(k) / static_cast<double>(bins_per_octave));
    atom.nominal_length = kernel.q * sample_rate / atom.center_hz;
    atom.bandwidth_hz = sample_rate / atom.nominal_length;

    // Odd number of taps covering the open interval (-L/2, L/2); the Hann
    // window is evaluated on the continuous width L.
    const double half = atom.nominal_length / 2.0;
    const auto half_taps = static_cast<std::size_t>(std::ceil(half)) - 1;
    const std::size_t taps = 2 * half_taps + 1;
    atom.re.resize(taps);
    atom.im.resize(taps);
    double window_sum = 0.0;
    for (std::size_t n = 0; n < taps; ++n) {
      const double t = static_cast<double>(n) - static_cast<double>(half_taps);
      const double w = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * t / atom.nominal_length);
      const double phase = 2.0 * std::numbers::pi * atom.center_hz * t / sample_rate;
      atom.re[n] = w * std::cos(phase);
      atom.im[n] = -w * std::sin(phase);  // conjugated, ready for the inner product
      window_sum += w;
    }
    for (std::size_t n = 0; n < taps; ++n) {
      atom.re[n] /= window_sum;
      atom.im[n] /= window_sum;
    }
  }
  return kernel;
}

double cqt_magnitude(std::span<const float> samples, std::ptrdiff_t center, const CqtAtom& atom) {
  const auto taps = static_cast<std::ptrdiff_t>(atom.re.size());
  const std::ptrdiff_t start = center - taps / 2;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -start);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(taps, n - start);
  double re = 0.0, im = 0.0;
  for (std::ptrdiff_t i = lo; i < hi; ++i) {
    const double x = samples[static_cast<std::size_t>(start + i)];
    re += x * atom.re[static_cast<std::size_t>(i)];
    im += x * atom.im[static_cast<std::size_t>(i)];
  }
  return std::hypot(re, im);
}

}  // namespace mrkd::features
