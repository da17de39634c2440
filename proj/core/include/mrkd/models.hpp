#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mrkd/autodiff/checkpoint.hpp"
#include "mrkd/autodiff/layers.hpp"

namespace mrkd::models {

using ad::Var;

enum class Family { kVggSmall, kResNetSmall };

std::string_view to_string(Family family);
Family parse_family(std::string_view name);

struct ModelConfig {
  Family family = Family::kResNetSmall;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t blocks_per_stage = 2;
  std::size_t input_channels = 3;
  std::size_t n_classes = 10;

  void validate() const;
};

/// A network mapping N x C x time x freq inputs to N x n_classes logits.
template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual Var<T> forward(const Var<T>& x, bool training) = 0;
  virtual std::vector<ad::Parameter<T>> parameters() const = 0;
  virtual std::vector<ad::Buffer<T>> buffers() = 0;

  const ModelConfig& config() const { return config_; }
  std::size_t parameter_count() const;

  /// Parameters followed by batch-norm running statistics, as f32.
  ad::NamedTensors state_dict();
  /// Restores every entry of state_dict(); missing or mis-shaped entries throw.
  void load_state_dict(const ad::NamedTensors& entries);

  /// Final classifier, exposed so tests can zero it.
  virtual ad::Linear<T>& classifier() = 0;

 protected:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}

 private:
  ModelConfig config_;
};

/// Two 3x3 conv + BN layers plus identity or 1x1-projection shortcut.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::mt19937_64& rng);

  Var<T> operator()(const Var<T>& x, bool training);
  /// The shortcut path alone (identity or projection).
  Var<T> shortcut(const Var<T>& x, bool training);

  ad::BatchNorm2d<T>& last_norm() { return bn2_; }
  bool has_projection() const { return has_projection_; }

  void collect(const std::string& prefix, std::vector<ad::Parameter<T>>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<ad::Buffer<T>>& out);

 private:
  ad::Conv2d<T> conv1_, conv2_;
  ad::BatchNorm2d<T> bn1_, bn2_;
  bool has_projection_ = false;
  ad::Conv2d<T> proj_;
  ad::BatchNorm2d<T> proj_bn_;
};

/// Stem conv3x3/2 + BN + ReLU + maxpool 2, residual stages (stride 2 at
/// each stage after the first), global average pool, linear.
template <typename T>
class ResNetSmall final : public Model<T> {
 public:
  ResNetSmall(const ModelConfig& config, std::uint64_t seed);

  Var<T> forward(const Var<T>& x, bool training) override;
  std::vector<ad::Parameter<T>> parameters() const override;
  std::vector<ad::Buffer<T>> buffers() override;
  ad::Linear<T>& classifier() override { return fc_; }

  Var<T> stem(const Var<T>& x, bool training);
  Var<T> head(const Var<T>& features);
  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }

 private:
  ad::Conv2d<T> stem_conv_;
  ad::BatchNorm2d<T> stem_bn_;
  std::vector<ResidualBlock<T>> blocks_;
  ad::Linear<T> fc_;
};

/// Per stage: blocks x [conv3x3 + BN + ReLU] then maxpool 2; global average
/// pool and linear.
template <typename T>
class VggSmall final : public Model<T> {
 public:
  VggSmall(const ModelConfig& config, std::uint64_t seed);

  Var<T> forward(const Var<T>& x, bool training) override;
  std::vector<ad::Parameter<T>> parameters() const override;
  std::vector<ad::Buffer<T>> buffers() override;
  ad::Linear<T>& classifier() override { return fc_; }

 private:
  struct Layer {
    ad::Conv2d<T> conv;
    ad::BatchNorm2d<T> bn;
  };
  std::vector<std::vector<Layer>> stages_;
  ad::Linear<T> fc_;
};

template <typename T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace mrkd::models
