#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mrkd/error.hpp"
#include "mrkd/features.hpp"

namespace mrkd::features {
namespace {

static_assert(std::endian::native == std::endian::little, "cache I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'R', 'K', 'D'};
constexpr std::uint8_t kDtypeF32 = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, std::size_t offset, T value) {
  std::memcpy(out.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

}  // namespace

// Layout: magic[4] version:u16 tag:u8 reserved:u8 dtype:u8 ndim:u8
//         dims:3*u32 hop_seconds:f32 pad[6]  -> 32 byte header, then f32 payload.
std::vector<std::uint8_t> encode_feature_map(const FeatureMap& fm) {
  if (fm.data.size() != fm.channels * fm.frames * fm.bins) {
    fail(ErrorKind::kShape, "cache_write: payload size does not match dims");
  }
  std::vector<std::uint8_t> out(kCacheHeaderBytes + fm.data.size() * sizeof(float), 0);
  std::memcpy(out.data(), kMagic, 4);
  put<std::uint16_t>(out, 4, kCacheVersion);
  put<std::uint8_t>(out, 6, static_cast<std::uint8_t>(fm.tag));
  put<std::uint8_t>(out, 8, kDtypeF32);
  put<std::uint8_t>(out, 9, 3);
  put<std::uint32_t>(out, 10, static_cast<std::uint32_t>(fm.channels));
  put<std::uint32_t>(out, 14, static_cast<std::uint32_t>(fm.frames));
  put<std::uint32_t>(out, 18, static_cast<std::uint32_t>(fm.bins));
  put<float>(out, 22, fm.hop_seconds);
  if (!fm.data.empty()) {
    std::memcpy(out.data() + kCacheHeaderBytes, fm.data.data(), fm.data.size() * sizeof(float));
  }
  return out;
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, std::string clip_id) {
  const std::string where = clip_id.empty() ? std::string("<buffer>") : clip_id;
  if (bytes.size() < kCacheHeaderBytes) fail(ErrorKind::kCorruptCache, where + ": truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::kCorruptCache, where + ": bad magic");
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version != kCacheVersion) {
    fail(ErrorKind::kCorruptCache, where + ": unsupported version " + std::to_string(version));
  }
  const auto tag = get<std::uint8_t>(bytes, 6);
  if (tag > static_cast<std::uint8_t>(Representation::kCqt)) {
    fail(ErrorKind::kCorruptCache, where + ": unknown representation tag " + std::to_string(tag));
  }
  if (get<std::uint8_t>(bytes, 8) != kDtypeF32) fail(ErrorKind::kCorruptCache, where + ": dtype is not f32");
  if (get<std::uint8_t>(bytes, 9) != 3) fail(ErrorKind::kCorruptCache, where + ": ndim is not 3");

  FeatureMap fm;
  fm.channels = get<std::uint32_t>(bytes, 10);
  fm.frames = get<std::uint32_t>(bytes, 14);
  fm.bins = get<std::uint32_t>(bytes, 18);
  fm.hop_seconds = get<float>(bytes, 22);
  fm.tag = static_cast<Representation>(tag);
  fm.clip_id = std::move(clip_id);
  const std::size_t count = fm.channels * fm.frames * fm.bins;
  if (bytes.size() != kCacheHeaderBytes + count * sizeof(float)) {
    fail(ErrorKind::kCorruptCache, where + ": payload is " +
                                       std::to_string(bytes.size() - kCacheHeaderBytes) +
                                       " bytes, header implies " + std::to_string(count * sizeof(float)));
  }
  fm.data.resize(count);
  if (count) std::memcpy(fm.data.data(), bytes.data() + kCacheHeaderBytes, count * sizeof(float));
  return fm;
}

void cache_write(const FeatureMap& fm, const std::filesystem::path& path) {
  const auto bytes = encode_feature_map(fm);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

FeatureMap cache_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kMissingFeature, "feature cache missing: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_feature_map(bytes, path.stem().string());
}

}  // namespace mrkd::features
