#include "mrkd/models.hpp"

#include <numeric>

namespace mrkd::models {

std::string_view to_string(Family family) {
  return family == Family::kVggSmall ? "vgg_small" : "resnet_small";
}

Family parse_family(std::string_view name) {
  if (name == "vgg_small") return Family::kVggSmall;
  if (name == "resnet_small") return Family::kResNetSmall;
  fail(ErrorKind::kParameter, "unknown model family '" + std::string(name) +
                                  "' (expected vgg_small or resnet_small)");
}

void ModelConfig::validate() const {
  if (n_classes < 2) fail(ErrorKind::kParameter, "model: n_classes must be >= 2");
  if (stage_channels.empty()) fail(ErrorKind::kParameter, "model: stage_channels must be non-empty");
  for (auto c : stage_channels) {
    if (c == 0) fail(ErrorKind::kParameter, "model: stage_channels must be positive");
  }
  if (blocks_per_stage == 0) fail(ErrorKind::kParameter, "model: blocks_per_stage must be >= 1");
  if (input_channels != 1 && input_channels != 3) {
    fail(ErrorKind::kParameter, "model: input_channels must be 1 or 3");
  }
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.var.value().size();
  return n;
}

template <typename T>
ad::NamedTensors Model<T>::state_dict() {
  ad::NamedTensors out;
  for (const auto& p : parameters()) out.emplace_back(p.name, p.var.value().template cast<float>());
  for (const auto& b : buffers()) out.emplace_back(b.name, b.tensor->template cast<float>());
  return out;
}

template <typename T>
void Model<T>::load_state_dict(const ad::NamedTensors& entries) {
  auto restore = [&](const std::string& name, ad::Tensor<T>& dst) {
    const auto* src = ad::find_entry(entries, name);
    if (!src) fail(ErrorKind::kCorruptCache, "checkpoint: missing entry " + name);
    if (src->shape() != dst.shape()) {
      fail(ErrorKind::kShape, "checkpoint: entry " + name + " has shape " + ad::shape_str(src->shape()) +
                                  ", model expects " + ad::shape_str(dst.shape()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>((*src)[i]);
  };
  for (auto p : parameters()) restore(p.name, p.var.mutable_value());
  for (auto b : buffers()) restore(b.name, *b.tensor);
}

// ---------------------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                std::mt19937_64& rng)
    : conv1_(in_channels, out_channels, 3, stride, rng),
      conv2_(out_channels, out_channels, 3, 1, rng),
      bn1_(out_channels),
      bn2_(out_channels),
      has_projection_(stride != 1 || in_channels != out_channels) {
  if (has_projection_) {
    proj_ = ad::Conv2d<T>(in_channels, out_channels, 1, stride, rng);
    proj_bn_ = ad::BatchNorm2d<T>(out_channels);
  }
}

template <typename T>
Var<T> ResidualBlock<T>::shortcut(const Var<T>& x, bool training) {
  return has_projection_ ? proj_bn_(proj_(x), training) : x;
}

template <typename T>
Var<T> ResidualBlock<T>::operator()(const Var<T>& x, bool training) {
  Var<T> h = ad::relu(bn1_(conv1_(x), training));
  h = bn2_(conv2_(h), training);
  return ad::relu(ad::add(h, shortcut(x, training)));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, std::vector<ad::Parameter<T>>& out) const {
  conv1_.collect(prefix + ".conv1", out);
  bn1_.collect(prefix + ".bn1", out);
  conv2_.collect(prefix + ".conv2", out);
  bn2_.collect(prefix + ".bn2", out);
  if (has_projection_) {
    proj_.collect(prefix + ".proj", out);
    proj_bn_.collect(prefix + ".proj_bn", out);
  }
}

template <typename T>
void ResidualBlock<T>::collect_buffers(const std::string& prefix, std::vector<ad::Buffer<T>>& out) {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
  if (has_projection_) proj_bn_.collect_buffers(prefix + ".proj_bn", out);
}

template <typename T>
ResNetSmall<T>::ResNetSmall(const ModelConfig& config, std::uint64_t seed) : Model<T>(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t width = config.stage_channels.front();
  stem_conv_ = ad::Conv2d<T>(config.input_channels, width, 3, 2, rng);
  stem_bn_ = ad::BatchNorm2d<T>(width);
  std::size_t in = width;
  for (std::size_t s = 0; s < config.stage_channels.size(); ++s) {
    const std::size_t out = config.stage_channels[s];
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back(in, out, stride, rng);
      in = out;
    }
  }
  fc_ = ad::Linear<T>(in, config.n_classes, rng);
}

template <typename T>
Var<T> ResNetSmall<T>::stem(const Var<T>& x, bool training) {
  return ad::max_pool2d(ad::relu(stem_bn_(stem_conv_(x), training)), 2, 2);
}

template <typename T>
Var<T> ResNetSmall<T>::head(const Var<T>& features) {
  return fc_(ad::global_avg_pool(features));
}

template <typename T>
Var<T> ResNetSmall<T>::forward(const Var<T>& x, bool training) {
  Var<T> h = stem(x, training);
  for (auto& block : blocks_) h = block(h, training);
  return head(h);
}

template <typename T>
std::vector<ad::Parameter<T>> ResNetSmall<T>::parameters() const {
  std::vector<ad::Parameter<T>> out;
  stem_conv_.collect("stem.conv", out);
  stem_bn_.collect("stem.bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("block" + std::to_string(i), out);
  fc_.collect("fc", out);
  return out;
}

template <typename T>
std::vector<ad::Buffer<T>> ResNetSmall<T>::buffers() {
  std::vector<ad::Buffer<T>> out;
  stem_bn_.collect_buffers("stem.bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect_buffers("block" + std::to_string(i), out);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
VggSmall<T>::VggSmall(const ModelConfig& config, std::uint64_t seed) : Model<T>(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = config.input_channels;
  for (auto out : config.stage_channels) {
    std::vector<Layer> stage;
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      stage.push_back({ad::Conv2d<T>(in, out, 3, 1, rng), ad::BatchNorm2d<T>(out)});
      in = out;
    }
    stages_.push_back(std::move(stage));
  }
  fc_ = ad::Linear<T>(in, config.n_classes, rng);
}

template <typename T>
Var<T> VggSmall<T>::forward(const Var<T>& x, bool training) {
  Var<T> h = x;
  for (auto& stage : stages_) {
    for (auto& layer : stage) h = ad::relu(layer.bn(layer.conv(h), training));
    // inputs that are already 1 cell wide along an axis skip the pool
    if (h.shape()[2] >= 2 && h.shape()[3] >= 2) h = ad::max_pool2d(h, 2, 2);
  }
  return fc_(ad::global_avg_pool(h));
}

template <typename T>
std::vector<ad::Parameter<T>> VggSmall<T>::parameters() const {
  std::vector<ad::Parameter<T>> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".layer" + std::to_string(b);
      stages_[s][b].conv.collect(prefix + ".conv", out);
      stages_[s][b].bn.collect(prefix + ".bn", out);
    }
  }
  fc_.collect("fc", out);
  return out;
}

template <typename T>
std::vector<ad::Buffer<T>> VggSmall<T>::buffers() {
  std::vector<ad::Buffer<T>> out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].bn.collect_buffers("stage" + std::to_string(s) + ".layer" + std::to_string(b) + ".bn", out);
    }
  }
  return out;
}

template <typename T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.family == Family::kVggSmall) return std::make_unique<VggSmall<T>>(config, seed);
  return std::make_unique<ResNetSmall<T>>(config, seed);
}

template class Model<float>;
template class Model<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class ResNetSmall<float>;
template class ResNetSmall<double>;
template class VggSmall<float>;
template class VggSmall<double>;
template std::unique_ptr<Model<float>> build_model<float>(const ModelConfig&, std::uint64_t);
template std::unique_ptr<Model<double>> build_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace mrkd::models
