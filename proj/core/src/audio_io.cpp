#include "mrkd/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string_view>

#include "mrkd/error.hpp"

namespace mrkd::audio {
namespace {

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t off, std::string_view tag) {
  return std::memcmp(b.data() + off, tag.data(), 4) == 0;
}

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_id) {
  const std::string where = source_id.empty() ? std::string("<buffer>") : source_id;
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
    fail(ErrorKind::kDecode, where + ": missing RIFF/WAVE header");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::span<const std::uint8_t> payload;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (tag_is(bytes, pos, "fmt ")) {
      if (chunk_size < 16 || body + 16 > bytes.size()) {
        fail(ErrorKind::kDecode, where + ": truncated fmt chunk");
      }
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = read_u32(bytes, body + 4);
      bits = read_u16(bytes, body + 14);
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      if (body + chunk_size > bytes.size()) {
        fail(ErrorKind::kDecode, where + ": data chunk runs past end of file");
      }
      payload = bytes.subspan(body, chunk_size);
      have_data = true;
    }
    // chunks are word aligned
    pos = body + chunk_size + (chunk_size & 1u);
  }

  if (!have_fmt) fail(ErrorKind::kDecode, where + ": no fmt chunk");
  if (!have_data) fail(ErrorKind::kDecode, where + ": no data chunk");
  if (format != 1) {
    fail(ErrorKind::kUnsupportedFormat,
         where + ": format tag " + std::to_string(format) + " (only PCM = 1 supported)");
  }
  if (bits != 16) {
    fail(ErrorKind::kUnsupportedFormat,
         where + ": bits per sample " + std::to_string(bits) + " (only 16 supported)");
  }
  if (channels < 1 || channels > 2) {
    fail(ErrorKind::kUnsupportedFormat,
         where + ": channel count " + std::to_string(channels) + " (1 or 2 supported)");
  }
  if (rate == 0) fail(ErrorKind::kDecode, where + ": sample rate is zero");

  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n = payload.size() / frame_bytes;
  AudioClip clip;
  clip.sample_rate = rate;
  clip.source_id = std::move(source_id);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto left = static_cast<std::int16_t>(read_u16(payload, i * frame_bytes));
    if (channels == 1) {
      clip.samples[i] = static_cast<float>(left / 32768.0);
    } else {
      const auto right = static_cast<std::int16_t>(read_u16(payload, i * frame_bytes + 2));
      clip.samples[i] = static_cast<float>((left / 32768.0 + right / 32768.0) * 0.5);
    }
  }
  return clip;
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  if (clip.sample_rate <= 0 || clip.sample_rate > 4294967295.0) {
    fail(ErrorKind::kParameter, "encode_wav: sample rate out of range");
  }
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    const double scaled = std::nearbyint(static_cast<double>(s) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

AudioClip resample_linear(const AudioClip& clip, double target_rate) {
  if (!(target_rate > 0)) fail(ErrorKind::kParameter, "resample_linear: target_rate must be > 0");
  if (!(clip.sample_rate > 0)) fail(ErrorKind::kParameter, "resample_linear: source rate must be > 0");
  if (target_rate == clip.sample_rate) return clip;

  AudioClip out;
  out.sample_rate = target_rate;
  out.source_id = clip.source_id;
  const std::size_t n_in = clip.samples.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * target_rate / clip.sample_rate));
  out.samples.resize(n_out);
  if (n_in == 0) return out;
  const double step = clip.sample_rate / target_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto left = static_cast<std::size_t>(pos);
    if (left + 1 >= n_in) {
      out.samples[i] = clip.samples[n_in - 1];  // hold the last sample past the end
      continue;
    }
    const double frac = pos - static_cast<double>(left);
    out.samples[i] = static_cast<float>(clip.samples[left] * (1.0 - frac) +
                                        clip.samples[left + 1] * frac);
  }
  return out;
}

AudioClip pad_or_crop(const AudioClip& clip, std::size_t target_len, CropMode mode,
                      std::uint64_t seed) {
  if (target_len == 0) fail(ErrorKind::kParameter, "pad_or_crop: target_len must be > 0");
  const std::size_t n = clip.samples.size();
  if (n == 0) fail(ErrorKind::kInvalidInput, "pad_or_crop: empty clip " + clip.source_id);

  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_id = clip.source_id;
  if (n == target_len) {
    out.samples = clip.samples;
  } else if (n < target_len) {
    out.samples.resize(target_len);
    for (std::size_t i = 0; i < target_len; ++i) out.samples[i] = clip.samples[i % n];
  } else {
    std::size_t offset = (n - target_len) / 2;
    if (mode == CropMode::kTrainRandom) {
      std::mt19937_64 rng(seed);
      offset = std::uniform_int_distribution<std::size_t>(0, n - target_len)(rng);
    }
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(offset + target_len));
  }
  return out;
}

}  // namespace mrkd::audio
