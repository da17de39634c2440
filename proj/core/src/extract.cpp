#include <algorithm>
#include <cmath>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {

std::string_view to_string(Representation rep) {
  switch (rep) {
    case Representation::kLogMel64: return "logmel64";
    case Representation::kLogMel128: return "logmel128";
    case Representation::kMfcc: return "mfcc";
    case Representation::kCqt: return "cqt";
  }
  return "unknown";
}

Representation parse_representation(std::string_view name) {
  if (name == "logmel64" || name == "logmel") return Representation::kLogMel64;
  if (name == "logmel128") return Representation::kLogMel128;
  if (name == "mfcc") return Representation::kMfcc;
  if (name == "cqt") return Representation::kCqt;
  fail(ErrorKind::kParameter, "unknown representation '" + std::string(name) +
                                  "' (expected logmel64, logmel128, mfcc or cqt)");
}

FeatureMap FeatureMap::slice_frames(std::size_t offset, std::size_t count) const {
  if (offset + count > frames) {
    fail(ErrorKind::kShape, "slice_frames: [" + std::to_string(offset) + ", " +
                                std::to_string(offset + count) + ") exceeds " +
                                std::to_string(frames) + " frames");
  }
  FeatureMap out(channels, count, bins, tag);
  out.hop_seconds = hop_seconds;
  out.clip_id = clip_id;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto src = data.begin() + static_cast<std::ptrdiff_t>(index(c, offset, 0));
    std::copy(src, src + static_cast<std::ptrdiff_t>(count * bins),
              out.data.begin() + static_cast<std::ptrdiff_t>(out.index(c, 0, 0)));
  }
  return out;
}

FeatureConfig FeatureConfig::defaults_for(Representation rep) {
  FeatureConfig cfg;
  cfg.representation = rep;
  cfg.channels = rep == Representation::kCqt ? 1 : 3;
  return cfg;
}

std::size_t FeatureConfig::n_mels() const {
  switch (representation) {
    case Representation::kLogMel64: return 64;
    case Representation::kLogMel128: return 128;
    case Representation::kMfcc: return mfcc_mels;
    case Representation::kCqt: return 0;
  }
  return 0;
}

std::size_t FeatureConfig::n_bins() const {
  switch (representation) {
    case Representation::kLogMel64:
    case Representation::kLogMel128: return n_mels();
    case Representation::kMfcc: return n_mfcc;
    case Representation::kCqt: return cqt_bins;
  }
  return 0;
}

void FeatureConfig::validate() const {
  if (channels != 1 && channels != 3) fail(ErrorKind::kParameter, "features: channels must be 1 or 3");
  if (frame_len == 0 || hop == 0) fail(ErrorKind::kParameter, "features: frame_len and hop must be >= 1");
  if (!(sample_rate > 0)) fail(ErrorKind::kParameter, "features: sample_rate must be > 0");
  if (delta_half_window < 1) fail(ErrorKind::kParameter, "features: delta half window must be >= 1");
  if (representation == Representation::kMfcc && n_mfcc > mfcc_mels) {
    fail(ErrorKind::kParameter, "mfcc: n_coeffs (" + std::to_string(n_mfcc) +
                                    ") exceeds n_mels (" + std::to_string(mfcc_mels) + ")");
  }
  if (representation == Representation::kMfcc && n_mfcc == 0) {
    fail(ErrorKind::kParameter, "mfcc: n_coeffs must be >= 1");
  }
}

FeatureExtractor::FeatureExtractor(FeatureConfig config) : config_(std::move(config)) {
  config_.validate();
  switch (config_.representation) {
    case Representation::kLogMel64:
    case Representation::kLogMel128:
    case Representation::kMfcc:
      filterbank_ = build_mel_filterbank(config_.sample_rate, config_.frame_len, config_.n_mels(),
                                         config_.f_min, config_.effective_f_max(), config_.mel_scale);
      break;
    case Representation::kCqt:
      cqt_kernel_ = build_cqt_kernel(config_.sample_rate, config_.cqt_f_min,
                                     config_.cqt_bins_per_octave, config_.cqt_bins);
      break;
  }
}

FeatureMap FeatureExtractor::logmel_map(const audio::AudioClip& clip, std::size_t n_mels) const {
  const Spectrogram spec = stft(clip.samples, config_.frame_len, config_.hop, Window::kHann);
  std::vector<double> power(spec.values.size());
  for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(spec.values[i]);
  const std::vector<double> mel = filterbank_.apply(power, spec.frames);

  FeatureMap fm(1, spec.frames, n_mels, config_.representation);
  for (std::size_t i = 0; i < mel.size(); ++i) {
    fm.data[i] = static_cast<float>(std::log(mel[i] + kLogFloor));
  }
  return fm;
}

FeatureMap FeatureExtractor::static_features(const audio::AudioClip& clip) const {
  if (clip.sample_rate != config_.sample_rate) {
    fail(ErrorKind::kInvalidInput, "features: clip " + clip.source_id + " is at " +
                                       std::to_string(clip.sample_rate) + " Hz, extractor expects " +
                                       std::to_string(config_.sample_rate) + " Hz");
  }
  FeatureMap fm;
  switch (config_.representation) {
    case Representation::kLogMel64:
    case Representation::kLogMel128:
      fm = logmel_map(clip, config_.n_mels());
      break;
    case Representation::kMfcc: {
      const FeatureMap lm = logmel_map(clip, config_.mfcc_mels);
      fm = FeatureMap(1, lm.frames, config_.n_mfcc, Representation::kMfcc);
      const std::vector<double> lm64(lm.data.begin(), lm.data.end());
      const std::vector<double> cc = cepstrum(lm64, lm.frames, config_.mfcc_mels, config_.n_mfcc);
      std::transform(cc.begin(), cc.end(), fm.data.begin(), [](double v) { return static_cast<float>(v); });
      break;
    }
    case Representation::kCqt: {
      const std::size_t frames = frame_count(clip.size(), config_.frame_len, config_.hop);
      if (frames == 0) {
        fail(ErrorKind::kInvalidInput, "cqt: clip " + clip.source_id + " is shorter than one frame");
      }
      fm = FeatureMap(1, frames, config_.cqt_bins, Representation::kCqt);
      for (std::size_t t = 0; t < frames; ++t) {
        const auto center = static_cast<std::ptrdiff_t>(t * config_.hop + config_.frame_len / 2);
        for (std::size_t k = 0; k < config_.cqt_bins; ++k) {
          const double mag = cqt_magnitude(clip.samples, center, cqt_kernel_.atoms[k]);
          fm.at(0, t, k) = static_cast<float>(std::log(mag * mag + kLogFloor));
        }
      }
      break;
    }
  }
  fm.hop_seconds = static_cast<float>(static_cast<double>(config_.hop) / config_.sample_rate);
  fm.clip_id = clip.source_id;
  return fm;
}

FeatureMap FeatureExtractor::operator()(const audio::AudioClip& clip) const {
  FeatureMap fm = static_features(clip);
  if (config_.channels == 3) fm = stack_deltas(fm, config_.delta_half_window);
  return fm;
}

FeatureMap logmel(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  if (cfg.representation != Representation::kLogMel64 &&
      cfg.representation != Representation::kLogMel128) {
    fail(ErrorKind::kParameter, "logmel: config representation must be logmel64 or logmel128");
  }
  return FeatureExtractor(cfg).static_features(clip);
}

FeatureMap mfcc(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  FeatureConfig c = cfg;
  c.representation = Representation::kMfcc;
  return FeatureExtractor(c).static_features(clip);
}

FeatureMap cqt(const audio::AudioClip& clip, const FeatureConfig& cfg) {
  FeatureConfig c = cfg;
  c.representation = Representation::kCqt;
  return FeatureExtractor(c).static_features(clip);
}

FeatureMap stack_deltas(const FeatureMap& static_map, std::size_t half_window) {
  if (static_map.channels != 1) fail(ErrorKind::kShape, "stack_deltas: expected a single-channel map");
  const std::size_t plane = static_map.frames * static_map.bins;
  std::vector<double> base(static_map.data.begin(), static_map.data.end());
  const auto d1 = delta(base, static_map.frames, static_map.bins, half_window);
  const auto d2 = delta(d1, static_map.frames, static_map.bins, half_window);

  FeatureMap out(3, static_map.frames, static_map.bins, static_map.tag);
  out.hop_seconds = static_map.hop_seconds;
  out.clip_id = static_map.clip_id;
  std::copy(static_map.data.begin(), static_map.data.end(), out.data.begin());
  for (std::size_t i = 0; i < plane; ++i) {
    out.data[plane + i] = static_cast<float>(d1[i]);
    out.data[2 * plane + i] = static_cast<float>(d2[i]);
  }
  return out;
}

Standardizer Standardizer::fit(std::span<const FeatureMap> maps) {
  if (maps.empty()) fail(ErrorKind::kInvalidInput, "standardizer: no feature maps to fit");
  Standardizer s;
  s.channels = maps.front().channels;
  s.bins = maps.front().bins;
  const std::size_t n = s.channels * s.bins;
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  double count = 0.0;
  for (const auto& fm : maps) {
    if (fm.channels != s.channels || fm.bins != s.bins) {
      fail(ErrorKind::kShape, "standardizer: inconsistent map shapes (" + fm.clip_id + ")");
    }
    for (std::size_t c = 0; c < fm.channels; ++c) {
      for (std::size_t t = 0; t < fm.frames; ++t) {
        for (std::size_t f = 0; f < fm.bins; ++f) {
          const double v = fm.at(c, t, f);
          sum[c * s.bins + f] += v;
          sum_sq[c * s.bins + f] += v * v;
        }
      }
    }
    count += static_cast<double>(fm.frames);
  }
  s.mean.resize(n);
  s.inv_std.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / count;
    const double var = std::max(0.0, sum_sq[i] / count - mean * mean);
    s.mean[i] = static_cast<float>(mean);
    s.inv_std[i] = static_cast<float>(1.0 / std::sqrt(var + 1e-8));
  }
  return s;
}

void Standardizer::apply(FeatureMap& fm) const {
  if (fm.channels != channels || fm.bins != bins) {
    fail(ErrorKind::kShape, "standardizer: map " + fm.clip_id + " has shape " +
                                std::to_string(fm.channels) + "x?x" + std::to_string(fm.bins) +
                                ", statistics are for " + std::to_string(channels) + "x?x" +
                                std::to_string(bins));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < fm.frames; ++t) {
      float* row = fm.data.data() + fm.index(c, t, 0);
      const float* mu = mean.data() + c * bins;
      const float* is = inv_std.data() + c * bins;
      for (std::size_t f = 0; f < bins; ++f) row[f] = (row[f] - mu[f]) * is[f];
    }
  }
}

FeatureMap Standardizer::to_map(Representation tag) const {
  // stored as a 2 x channels x bins map: plane 0 = mean, plane 1 = 1/std
  FeatureMap fm(2, channels, bins, tag);
  std::copy(mean.begin(), mean.end(), fm.data.begin());
  std::copy(inv_std.begin(), inv_std.end(),
            fm.data.begin() + static_cast<std::ptrdiff_t>(channels * bins));
  return fm;
}

Standardizer Standardizer::from_map(const FeatureMap& fm) {
  if (fm.channels != 2) fail(ErrorKind::kCorruptCache, "standardizer: expected a 2-plane statistics map");
  Standardizer s;
  s.channels = fm.frames;
  s.bins = fm.bins;
  const std::size_t n = s.channels * s.bins;
  s.mean.assign(fm.data.begin(), fm.data.begin() + static_cast<std::ptrdiff_t>(n));
  s.inv_std.assign(fm.data.begin() + static_cast<std::ptrdiff_t>(n), fm.data.end());
  return s;
}

}  // namespace mrkd::features
