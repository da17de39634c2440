#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mrkd::audio {

inline constexpr double kCanonicalRate = 44100.0;
// 1.5 s at 44.1 kHz; 80 ms frames at 10 ms hop give 143 frames.
inline constexpr std::size_t kCanonicalLength = 66150;

/// Mono floating-point audio in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  double sample_rate = kCanonicalRate;
  std::string source_id;

  std::size_t size() const { return samples.size(); }
};

enum class CropMode { kTrainRandom, kEvalCenter };

/// Decodes a RIFF/WAVE file holding 16-bit PCM with one or two channels.
/// Samples are divided by 32768; stereo is averaged to mono.
AudioClip load_wav(const std::filesystem::path& path);

/// Same as load_wav but from an in-memory byte buffer.
AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_id = {});

/// Encodes mono 16-bit PCM. Values are scaled by 32768, rounded and clamped,
/// so decode(encode(decode(bytes))) reproduces the original bytes.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

AudioClip resample_linear(const AudioClip& clip, double target_rate);

/// Returns exactly target_len samples. Short clips are tiled; long clips are
/// cropped at a seeded random offset (train) or at floor((len - target) / 2).
AudioClip pad_or_crop(const AudioClip& clip, std::size_t target_len, CropMode mode,
                      std::uint64_t seed = 0);

}  // namespace mrkd::audio
