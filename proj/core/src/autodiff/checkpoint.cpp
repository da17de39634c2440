#include "mrkd/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mrkd::ad {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    need(n);
    if (n) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::kCorruptCache, "checkpoint: truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries) {
  Writer w;
  w.put_bytes("MRKP", 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > 0xffff) fail(ErrorKind::kParameter, "checkpoint: entry name too long");
    if (tensor.rank() > 0xff) fail(ErrorKind::kParameter, "checkpoint: too many dimensions");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(tensor.data(), tensor.size() * sizeof(float));
  }
  return w.take();
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MRKP", 4) != 0) fail(ErrorKind::kCorruptCache, "checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kCorruptCache, "checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name(len, '\0');
    r.get_bytes(name.data(), len);
    const auto ndim = r.get<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor<float> t(shape);
    r.get_bytes(t.data(), t.size() * sizeof(float));
    entries.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) fail(ErrorKind::kCorruptCache, "checkpoint: trailing bytes");
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  const auto bytes = encode_checkpoint(entries);
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

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

const Tensor<float>* find_entry(const NamedTensors& entries, const std::string& name) {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

}  // namespace mrkd::ad
