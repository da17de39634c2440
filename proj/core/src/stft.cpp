#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {
namespace {

// FFTW planning is not thread safe, execution is. Plans are built with
// FFTW_ESTIMATE so the chosen algorithm (and therefore every output bit)
// does not depend on timing.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan plan_for(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    auto* in = fftw_alloc_real(n);
    auto* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(n, p);
    return p;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mutex_;
  std::map<std::size_t, fftw_plan> plans_;
};

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

// Per-thread scratch reused across calls of the same length.
struct Scratch {
  std::size_t n = 0;
  std::unique_ptr<double, FftwDeleter> in;
  std::unique_ptr<fftw_complex, FftwDeleter> out;

  void reserve(std::size_t len) {
    if (len == n) return;
    in.reset(fftw_alloc_real(len));
    out.reset(fftw_alloc_complex(len / 2 + 1));
    n = len;
  }
};

void transform(fftw_plan plan, Scratch& scratch, std::complex<double>* dst, std::size_t n) {
  fftw_execute_dft_r2c(plan, scratch.in.get(), scratch.out.get());
  const std::size_t bins = n / 2 + 1;
  for (std::size_t k = 0; k < bins; ++k) {
    dst[k] = {scratch.out.get()[k][0], scratch.out.get()[k][1]};
  }
}

}  // namespace

std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop) {
  if (frame_len == 0 || hop == 0 || n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

std::vector<double> make_window(Window window, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (window == Window::kHann) {
    for (std::size_t n = 0; n < length; ++n) {
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(length));
    }
  }
  return w;
}

std::vector<std::complex<double>> real_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) fail(ErrorKind::kInvalidInput, "real_dft: empty input");
  thread_local Scratch scratch;
  scratch.reserve(n);
  std::copy(x.begin(), x.end(), scratch.in.get());
  std::vector<std::complex<double>> out(n / 2 + 1);
  transform(PlanCache::instance().plan_for(n), scratch, out.data(), n);
  return out;
}

Spectrogram stft(std::span<const float> samples, std::size_t frame_len, std::size_t hop,
                 Window window) {
  if (hop == 0) fail(ErrorKind::kParameter, "stft: hop must be >= 1");
  if (frame_len == 0) fail(ErrorKind::kParameter, "stft: frame_len must be >= 1");
  if (samples.size() < frame_len) {
    fail(ErrorKind::kInvalidInput, "stft: clip of " + std::to_string(samples.size()) +
                                       " samples is shorter than one frame (" +
                                       std::to_string(frame_len) + ")");
  }
  Spectrogram spec;
  spec.frames = frame_count(samples.size(), frame_len, hop);
  spec.bins = frame_len / 2 + 1;
  spec.values.resize(spec.frames * spec.bins);

  const auto w = make_window(window, frame_len);
  const fftw_plan plan = PlanCache::instance().plan_for(frame_len);
  thread_local Scratch scratch;
  scratch.reserve(frame_len);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const float* frame = samples.data() + t * hop;
    double* in = scratch.in.get();
    for (std::size_t n = 0; n < frame_len; ++n) in[n] = static_cast<double>(frame[n]) * w[n];
    transform(plan, scratch, spec.values.data() + t * spec.bins, frame_len);
  }
  return spec;
}

}  // namespace mrkd::features
