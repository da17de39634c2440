#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrkd/autodiff/tensor.hpp"

namespace mrkd::ad {

inline constexpr std::uint16_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

/// "MRKP" | version u16 | count u32 | per entry: name_len u16, name bytes,
/// ndim u8, dims u32 * ndim, f32 payload. Little endian.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

const Tensor<float>* find_entry(const NamedTensors& entries, const std::string& name);

}  // namespace mrkd::ad
