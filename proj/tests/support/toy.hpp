#pragma once

#include <random>
#include <string>

#include "mrkd/distill.hpp"

// Small class-separable feature sets and models for training-loop tests.
namespace toy {

/// n maps of 1 x frames x bins. Class c has a bump at bin (c * bins / m) plus
/// unit noise scaled by `noise`.
inline mrkd::distill::FeatureSet feature_set(std::size_t n, std::size_t m, std::size_t frames, std::size_t bins,
                                             std::uint64_t seed, double noise = 0.5,
                                             std::size_t window = 0) {
  mrkd::distill::FeatureSet fs;
  fs.n_classes = m;
  fs.window_frames = window ? window : frames;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % m;
    mrkd::features::FeatureMap fm(1, frames, bins, mrkd::features::Representation::kLogMel64);
    fm.clip_id = "toy" + std::to_string(i);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < bins; ++f) {
        const double bump = (f == label * bins / m || f == label * bins / m + 1) ? 2.0 : 0.0;
        fm.at(0, t, f) = static_cast<float>(bump + noise * g(rng));
      }
    }
    fs.maps.push_back(std::move(fm));
    fs.labels.push_back(label);
  }
  return fs;
}

inline mrkd::models::ModelConfig model_config(std::size_t m, mrkd::models::Family family =
                                                                 mrkd::models::Family::kResNetSmall) {
  mrkd::models::ModelConfig c;
  c.family = family;
  c.stage_channels = {4, 8};
  c.blocks_per_stage = 1;
  c.input_channels = 1;
  c.n_classes = m;
  return c;
}

inline mrkd::distill::BranchSpec spec(const std::string& id, std::size_t m, std::uint64_t seed) {
  mrkd::distill::BranchSpec s;
  s.branch_id = id;
  s.model = model_config(m);
  s.seed = seed;
  return s;
}

inline mrkd::distill::DistillationSchedule schedule(int cycles, int b = 1, int d = 1, std::size_t batch = 8) {
  mrkd::distill::DistillationSchedule s;
  s.cycles = cycles;
  s.branch_epochs = b;
  s.distill_epochs = d;
  s.batch_size = batch;
  s.total_epoch_budget = cycles * (b + d);
  return s;
}

}  // namespace toy
