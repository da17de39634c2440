#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "mrkd/autodiff/losses.hpp"
#include "mrkd/data.hpp"
#include "mrkd/features.hpp"
#include "mrkd/models.hpp"

namespace {

mrkd::audio::AudioClip test_clip() {
  mrkd::data::SyntheticOptions opts;
  return mrkd::data::synth_clip(3, 11, opts);
}

void BM_Stft(benchmark::State& state) {
  const auto clip = test_clip();
  for (auto _ : state) {
    auto spec = mrkd::features::stft(clip.samples, 3528, 441);
    benchmark::DoNotOptimize(spec.values.data());
  }
}
BENCHMARK(BM_Stft)->Unit(benchmark::kMillisecond);

void BM_Extract(benchmark::State& state) {
  const auto rep = static_cast<mrkd::features::Representation>(state.range(0));
  const mrkd::features::FeatureExtractor fx(mrkd::features::FeatureConfig::defaults_for(rep));
  const auto clip = test_clip();
  for (auto _ : state) {
    auto fm = fx(clip);
    benchmark::DoNotOptimize(fm.data.data());
  }
  state.SetLabel(std::string(mrkd::features::to_string(rep)));
}
BENCHMARK(BM_Extract)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  mrkd::ad::Var<float> x(mrkd::ad::he_normal<float>({16, c, 36, 16}, 1, rng), true);
  mrkd::ad::Var<float> w(mrkd::ad::he_normal<float>({c, c, 3, 3}, 9 * c, rng), true);
  for (auto _ : state) {
    auto y = mrkd::ad::conv2d<float>(x, w, std::nullopt, {1, mrkd::ad::Padding::kSame});
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

// One optimizer-free forward + backward of the default network on a
// batch of 64 logMel64 crops.
void BM_TrainStep(benchmark::State& state) {
  mrkd::models::ModelConfig cfg;
  cfg.family = static_cast<mrkd::models::Family>(state.range(0));
  auto model = mrkd::models::build_model<float>(cfg, 3);
  std::mt19937_64 rng(2);
  const auto x = mrkd::ad::he_normal<float>({64, 3, 143, 64}, 1, rng);
  mrkd::ad::Tensor<float> targets({64, 10});
  for (std::size_t i = 0; i < 64; ++i) targets[i * 10 + i % 10] = 1.0f;
  for (auto _ : state) {
    auto logits = model->forward(mrkd::ad::Var<float>(x), true);
    auto loss = mrkd::ad::single_branch_loss(logits, targets);
    mrkd::ad::backward(loss.total);
    benchmark::DoNotOptimize(loss.values.l_d);
  }
  state.SetLabel(std::string(mrkd::models::to_string(cfg.family)));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
