#include "mrkd/distill.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "mrkd/autodiff/mixup.hpp"
#include "mrkd/data.hpp"
#include "mrkd/error.hpp"
#include "mrkd/rng.hpp"

namespace mrkd::distill {

namespace {

constexpr std::uint64_t kMixupSalt = 0x6d69787570ULL;
constexpr std::uint64_t kCropSalt = 0x63726f70ULL;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Inputs for one minibatch: N x C x T x F features and one-hot targets.
struct Batch {
  ad::Tensor<float> inputs;
  ad::Tensor<float> targets;
};

Batch assemble(const FeatureSet& data, std::span<const std::size_t> ids, bool random_crop, std::uint64_t seed,
               std::uint64_t epoch) {
  const auto& first = data.maps[ids.front()];
  const std::size_t t = data.window_frames;
  const std::size_t plane = first.channels * t * first.bins;
  Batch b{ad::Tensor<float>(ad::Shape{ids.size(), first.channels, t, first.bins}),
          ad::Tensor<float>(ad::Shape{ids.size(), data.n_classes})};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& map = data.maps[ids[i]];
    std::size_t offset = center_offset(map.frames, t);
    if (random_crop && map.frames > t) {
      std::mt19937_64 rng(derive_seed({seed, epoch, ids[i], kCropSalt}));
      offset = std::uniform_int_distribution<std::size_t>(0, map.frames - t)(rng);
    }
    const auto crop = (offset == 0 && map.frames == t) ? map : crop_frames(map, offset, t);
    std::copy(crop.data.begin(), crop.data.end(), b.inputs.data() + i * plane);
    b.targets[i * data.n_classes + data.labels[ids[i]]] = 1.0f;
  }
  return b;
}

ad::Tensor<float> gather_rows(const ad::Tensor<float>& m, std::span<const std::size_t> ids) {
  const std::size_t cols = m.dim(1);
  ad::Tensor<float> out(ad::Shape{ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(m.data() + ids[i] * cols, m.data() + (ids[i] + 1) * cols, out.data() + i * cols);
  }
  return out;
}

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

// Shared epoch loop for both training phases. `teacher` null means CE only.
std::vector<EpochRecord> run_epochs(Branch& branch, const FeatureSet& data, const AggregatedTeacher* teacher,
                                    int epochs, const DistillationSchedule& schedule,
                                    const TrainingOptions& options, int cycle, Phase tag) {
  if (epochs < 0) fail(ErrorKind::kParameter, "epoch count must be >= 0");
  data.validate();
  auto& opt = branch.optimizer();
  auto& model = branch.model();
  const auto ids = all_ids(data.size());
  const bool training_mode = !(tag == Phase::kDistill && options.freeze_bn_in_distill);
  std::vector<EpochRecord> records;
  for (int e = 0; e < epochs; ++e) {
    const auto start = Clock::now();
    EpochRecord rec;
    rec.cycle = cycle;
    rec.phase = tag;
    rec.branch_id = branch.spec().branch_id;
    rec.epoch = opt.state().epoch + 1;
    rec.lr = opt.state().lr();
    const auto epoch_key = static_cast<std::uint64_t>(opt.state().epoch);
    const auto batches = data::make_batches(ids, schedule.batch_size, branch.spec().seed, epoch_key);
    double sum_ce = 0, sum_kl = 0, sum_d = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& bid = batches[bi];
      auto batch = assemble(data, bid, true, branch.spec().seed, epoch_key);
      ad::Tensor<float> teacher_rows;
      if (teacher) teacher_rows = gather_rows(teacher->values, bid);
      if (options.mixup && bid.size() >= 2) {
        const auto draw = ad::draw_mixup(bid.size(), options.mixup_alpha,
                                         derive_seed({branch.spec().seed, epoch_key, bi, kMixupSalt}));
        batch.inputs = ad::apply_mixup(batch.inputs, draw);
        batch.targets = ad::apply_mixup(batch.targets, draw);
        if (teacher) teacher_rows = ad::apply_mixup(teacher_rows, draw);
      }
      try {
        auto logits = model.forward(ad::Var<float>(std::move(batch.inputs)), training_mode);
        ad::DistillLoss<float> loss;
        if (teacher) {
          loss = ad::distillation_loss(logits, batch.targets, teacher_rows,
                                       ad::DistillLossOptions{schedule.temperature, options.kl_direction,
                                                              options.kl_t2_scaling});
        } else {
          loss = ad::single_branch_loss(logits, batch.targets);
        }
        opt.zero_grad();
        ad::backward(loss.total);
        opt.step();
        rec.batches.push_back(loss.values);
        sum_ce += loss.values.l_ce;
        sum_kl += loss.values.l_kl;
        sum_d += loss.values.l_d;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kNumeric) throw;
        fail(ErrorKind::kNumeric, "branch " + branch.spec().branch_id + " cycle " + std::to_string(cycle) + " " +
                                      std::string(to_string(tag)) + " epoch " + std::to_string(rec.epoch) +
                                      " step " + std::to_string(bi) + ": " + err.what());
      }
    }
    const double nb = static_cast<double>(std::max<std::size_t>(1, batches.size()));
    rec.l_ce = sum_ce / nb;
    rec.l_kl = sum_kl / nb;
    rec.l_d = sum_d / nb;
    opt.advance_epoch();
    rec.wall_ms = elapsed_ms(start);
    records.push_back(std::move(rec));
  }
  return records;
}

template <typename Fn>
void for_each_branch(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t count = std::min(workers, n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_inputs(std::vector<Branch>& branches, std::span<const FeatureSet* const> data) {
  if (branches.empty()) fail(ErrorKind::kParameter, "at least one branch is required");
  if (data.size() != branches.size()) {
    fail(ErrorKind::kParameter, std::to_string(branches.size()) + " branches but " + std::to_string(data.size()) +
                                    " feature sets");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (!ids.insert(branches[i].spec().branch_id).second) {
      fail(ErrorKind::kParameter, "duplicate branch id '" + branches[i].spec().branch_id + "'");
    }
    if (!data[i]) fail(ErrorKind::kMissingFeature, "no features for branch " + branches[i].spec().branch_id);
    data[i]->validate();
    if (data[i]->size() != data[0]->size()) {
      fail(ErrorKind::kParameter, "feature sets differ in training row count");
    }
    if (data[i]->labels != data[0]->labels) fail(ErrorKind::kParameter, "feature sets disagree on labels");
  }
}

void emit(TrainingLog& log, const RunOptions& run, std::vector<EpochRecord>&& recs) {
  for (auto& r : recs) {
    if (run.on_record) run.on_record(r);
    log.records.push_back(std::move(r));
  }
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void DistillationSchedule::validate(bool allow_empty_phases) const {
  std::vector<std::string> problems;
  const int floor = allow_empty_phases ? 0 : 1;
  if (cycles < 1) problems.push_back("cycles must be >= 1");
  if (branch_epochs < floor) problems.push_back("branch_epochs must be >= " + std::to_string(floor));
  if (distill_epochs < floor) problems.push_back("distill_epochs must be >= " + std::to_string(floor));
  if (!(temperature > 0)) problems.push_back("temperature must be > 0");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (warmup_cycles < 0) problems.push_back("warmup_cycles must be >= 0");
  if (total_epochs() > total_epoch_budget) {
    problems.push_back("cycles * (branch_epochs + distill_epochs) = " + std::to_string(total_epochs()) +
                       " exceeds the epoch budget " + std::to_string(total_epoch_budget));
  }
  if (!problems.empty()) {
    std::string msg = "invalid schedule:";
    for (const auto& p : problems) msg += " " + p + ";";
    fail(ErrorKind::kParameter, msg);
  }
}

void FeatureSet::validate() const {
  if (maps.empty()) fail(ErrorKind::kMissingFeature, "feature set is empty");
  if (labels.size() != maps.size()) fail(ErrorKind::kShape, "feature set: labels and maps differ in length");
  if (window_frames == 0) fail(ErrorKind::kParameter, "feature set: window_frames must be > 0");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    if (m.channels != maps[0].channels || m.bins != maps[0].bins || m.frames == 0) {
      fail(ErrorKind::kShape, "feature set: map " + std::to_string(i) + " (" + m.clip_id + ") has a different shape");
    }
    if (labels[i] >= n_classes) fail(ErrorKind::kInvalidInput, "feature set: label out of range at row " + std::to_string(i));
  }
}

features::FeatureMap crop_frames(const features::FeatureMap& map, std::size_t offset, std::size_t count) {
  if (map.frames == 0) fail(ErrorKind::kShape, "crop of an empty feature map " + map.clip_id);
  if (map.frames >= offset + count) return map.slice_frames(offset, count);
  features::FeatureMap out(map.channels, count, map.bins, map.tag);
  out.hop_seconds = map.hop_seconds;
  out.clip_id = map.clip_id;
  for (std::size_t c = 0; c < map.channels; ++c) {
    for (std::size_t t = 0; t < count; ++t) {
      const std::size_t src = (offset + t) % map.frames;
      std::copy_n(map.data.begin() + static_cast<std::ptrdiff_t>(map.index(c, src, 0)), map.bins,
                  out.data.begin() + static_cast<std::ptrdiff_t>(out.index(c, t, 0)));
    }
  }
  return out;
}

std::size_t center_offset(std::size_t frames, std::size_t count) { return frames > count ? (frames - count) / 2 : 0; }

Branch::Branch(BranchSpec spec, const TrainingOptions& options, int total_epochs)
    : spec_(std::move(spec)),
      model_(models::build_model<float>(spec_.model, spec_.seed)),
      optimizer_(model_->parameters(), ad::OptimizerState{options.base_lr, options.momentum, 0, total_epochs}) {}

ad::NamedTensors Branch::state() {
  auto entries = model_->state_dict();
  entries.emplace_back("optim.epoch",
                       ad::Tensor<float>(ad::Shape{1}, std::vector<float>{static_cast<float>(optimizer_.state().epoch)}));
  const auto& params = optimizer_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.emplace_back("optim.velocity." + params[i].name, optimizer_.velocity()[i]);
  }
  return entries;
}

void Branch::load_state(const ad::NamedTensors& entries) {
  ad::NamedTensors model_entries;
  for (const auto& e : entries) {
    if (e.first.rfind("optim.", 0) != 0) model_entries.push_back(e);
  }
  model_->load_state_dict(model_entries);
  if (const auto* epoch = ad::find_entry(entries, "optim.epoch")) {
    optimizer_.state().epoch = static_cast<int>((*epoch)[0]);
  }
  const auto& params = optimizer_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (const auto* v = ad::find_entry(entries, "optim.velocity." + params[i].name)) {
      if (v->shape() != params[i].var.shape()) {
        fail(ErrorKind::kShape, "checkpoint velocity shape mismatch for " + params[i].name);
      }
      optimizer_.velocity()[i] = *v;
    }
  }
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kBranch: return "branch";
    case Phase::kFuse: return "fuse";
    case Phase::kDistill: return "distill";
    case Phase::kTrain: return "train";
  }
  return "?";
}

std::vector<EpochRecord> train_branch_phase(Branch& branch, const FeatureSet& data, int epochs,
                                            const DistillationSchedule& schedule, const TrainingOptions& options,
                                            int cycle, Phase tag) {
  return run_epochs(branch, data, nullptr, epochs, schedule, options, cycle, tag);
}

SoftLabelMatrix compute_soft_labels(Branch& branch, const FeatureSet& data, double temperature, int cycle) {
  data.validate();
  if (!(temperature > 0)) fail(ErrorKind::kParameter, "temperature must be > 0");
  const std::size_t n = data.size();
  const std::size_t m = data.n_classes;
  SoftLabelMatrix out{ad::Tensor<float>(ad::Shape{n, m}), temperature, cycle, branch.spec().branch_id};
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<std::size_t> ids(std::min(kChunk, n - start));
    std::iota(ids.begin(), ids.end(), start);
    auto batch = assemble(data, ids, false, 0, 0);
    const ad::NoGradGuard no_grad;
    const auto logits = branch.model().forward(ad::Var<float>(std::move(batch.inputs)), false).value();
    if (logits.dim(1) != m) fail(ErrorKind::kShape, "model output width differs from class count");
    const auto probs = ad::softmax_rows(logits.cast<double>(), temperature);
    for (std::size_t i = 0; i < probs.size(); ++i) out.values[start * m + i] = static_cast<float>(probs[i]);
  }
  return out;
}

AggregatedTeacher aggregate(std::span<const SoftLabelMatrix> soft_labels) {
  if (soft_labels.empty()) fail(ErrorKind::kAggregation, "aggregate: no soft-label matrices");
  const auto& first = soft_labels.front();
  for (const auto& s : soft_labels) {
    if (s.values.shape() != first.values.shape()) {
      fail(ErrorKind::kAggregation, "aggregate: shape " + ad::shape_str(s.values.shape()) + " from branch " +
                                        s.branch_id + " differs from " + ad::shape_str(first.values.shape()));
    }
    if (s.temperature != first.temperature) {
      fail(ErrorKind::kAggregation, "aggregate: temperature mismatch from branch " + s.branch_id);
    }
    if (s.cycle != first.cycle) fail(ErrorKind::kAggregation, "aggregate: cycle mismatch from branch " + s.branch_id);
  }
  AggregatedTeacher teacher{ad::Tensor<float>(first.values.shape()), first.temperature, first.cycle,
                            soft_labels.size()};
  const double g = static_cast<double>(soft_labels.size());
  for (std::size_t i = 0; i < teacher.values.size(); ++i) {
    double sum = 0.0;
    for (const auto& s : soft_labels) sum += s.values[i];
    teacher.values[i] = static_cast<float>(sum / g);
  }
  return teacher;
}

std::vector<EpochRecord> distill_phase(Branch& branch, const FeatureSet& data, const AggregatedTeacher& teacher,
                                       int epochs, const DistillationSchedule& schedule,
                                       const TrainingOptions& options, int cycle, bool use_kl) {
  if (teacher.values.rank() != 2 || teacher.values.dim(0) != data.size() || teacher.values.dim(1) != data.n_classes) {
    fail(ErrorKind::kAggregation, "teacher shape " + ad::shape_str(teacher.values.shape()) + " does not match " +
                                      std::to_string(data.size()) + " x " + std::to_string(data.n_classes));
  }
  if (use_kl && teacher.temperature != schedule.temperature) {
    fail(ErrorKind::kAggregation, "teacher temperature differs from the schedule temperature");
  }
  return run_epochs(branch, data, use_kl ? &teacher : nullptr, epochs, schedule, options, cycle, Phase::kDistill);
}

std::filesystem::path phase_checkpoint_path(const std::filesystem::path& dir, const std::string& branch_id,
                                            int cycle, Phase phase) {
  char name[64];
  std::snprintf(name, sizeof name, "cycle_%03d_%s.mrkp", cycle, std::string(to_string(phase)).c_str());
  return dir / branch_id / name;
}

TrainingLog run_cycles(std::vector<Branch>& branches, std::span<const FeatureSet* const> data,
                       const DistillationSchedule& schedule, const TrainingOptions& options, const RunOptions& run) {
  check_inputs(branches, data);
  schedule.validate(true);
  const std::size_t g = branches.size();
  TrainingLog log;
  std::size_t completed = 0;

  const auto save = [&](std::size_t i, int cycle, Phase phase) {
    if (run.checkpoint_dir.empty()) return;
    ad::save_checkpoint(phase_checkpoint_path(run.checkpoint_dir, branches[i].spec().branch_id, cycle, phase),
                        branches[i].state());
  };

  for (int q = 1; q <= schedule.cycles; ++q) {
    std::vector<std::vector<EpochRecord>> recs(g);
    try {
      for_each_branch(g, run.workers, [&](std::size_t i) {
        recs[i] = train_branch_phase(branches[i], *data[i], schedule.branch_epochs, schedule, options, q);
        save(i, q, Phase::kBranch);
      });
      for (auto& r : recs) emit(log, run, std::move(r));
      if (!run.checkpoint_dir.empty()) log.checkpoints_written += g;
      ++completed;

      const auto fuse_start = Clock::now();
      std::vector<SoftLabelMatrix> soft(g);
      for_each_branch(g, run.workers, [&](std::size_t i) {
        soft[i] = compute_soft_labels(branches[i], *data[i], schedule.temperature, q);
      });
      const AggregatedTeacher teacher = aggregate(soft);
      if (run.dump_soft_labels && !run.checkpoint_dir.empty()) {
        char name[64];
        for (std::size_t i = 0; i < g; ++i) {
          std::snprintf(name, sizeof name, "soft_labels_cycle_%03d.mrkd", q);
          features::cache_write(soft_labels_as_map(soft[i].values, soft[i].temperature),
                                run.checkpoint_dir / branches[i].spec().branch_id / name);
        }
        std::snprintf(name, sizeof name, "teacher_cycle_%03d.mrkd", q);
        features::cache_write(soft_labels_as_map(teacher.values, teacher.temperature), run.checkpoint_dir / name);
      }
      EpochRecord fuse;
      fuse.cycle = q;
      fuse.phase = Phase::kFuse;
      fuse.branch_id = "*";
      fuse.wall_ms = elapsed_ms(fuse_start);
      std::vector<EpochRecord> fuse_recs{fuse};
      emit(log, run, std::move(fuse_recs));
      ++completed;

      const bool use_kl = q > schedule.warmup_cycles;
      for_each_branch(g, run.workers, [&](std::size_t i) {
        recs[i] = distill_phase(branches[i], *data[i], teacher, schedule.distill_epochs, schedule, options, q, use_kl);
        save(i, q, Phase::kDistill);
      });
      for (auto& r : recs) emit(log, run, std::move(r));
      if (!run.checkpoint_dir.empty()) log.checkpoints_written += g;
      ++completed;
    } catch (const Error& err) {
      fail(err.kind(), std::string(err.what()) + " [cycle " + std::to_string(q) + " aborted after " +
                           std::to_string(completed) + " completed phases]");
    }
  }
  return log;
}

TrainingLog train_independent(std::vector<Branch>& branches, std::span<const FeatureSet* const> data,
                              const DistillationSchedule& schedule, const TrainingOptions& options,
                              const RunOptions& run) {
  check_inputs(branches, data);
  schedule.validate(true);
  const std::size_t g = branches.size();
  std::vector<std::vector<EpochRecord>> recs(g);
  for_each_branch(g, run.workers, [&](std::size_t i) {
    recs[i] = train_branch_phase(branches[i], *data[i], schedule.total_epochs(), schedule, options, 0, Phase::kTrain);
  });
  TrainingLog log;
  for (auto& r : recs) emit(log, run, std::move(r));
  return log;
}

void write_log_header(std::ostream& out) {
  out << "cycle\tphase\tbranch\tepoch\tl_ce\tl_kl\tl_d\tlr\twall_ms\n";
}

void write_log_record(std::ostream& out, const EpochRecord& r) {
  out << r.cycle << '\t' << to_string(r.phase) << '\t' << r.branch_id << '\t';
  if (r.phase == Phase::kFuse) {
    out << "-\t-\t-\t-\t-\t";
  } else {
    out << r.epoch << '\t' << fmt_g(r.l_ce) << '\t' << fmt_g(r.l_kl) << '\t' << fmt_g(r.l_d) << '\t' << fmt_g(r.lr)
        << '\t';
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", r.wall_ms);
  out << buf << '\n';
}

std::vector<EpochRecord> parse_log(std::istream& in) {
  std::vector<EpochRecord> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("cycle\t", 0) == 0) continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 9) fail(ErrorKind::kInvalidInput, "training log: expected 9 fields, got " + std::to_string(f.size()));
    EpochRecord r;
    r.cycle = std::stoi(f[0]);
    if (f[1] == "branch") r.phase = Phase::kBranch;
    else if (f[1] == "fuse") r.phase = Phase::kFuse;
    else if (f[1] == "distill") r.phase = Phase::kDistill;
    else if (f[1] == "train") r.phase = Phase::kTrain;
    else fail(ErrorKind::kInvalidInput, "training log: unknown phase '" + f[1] + "'");
    r.branch_id = f[2];
    if (r.phase != Phase::kFuse) {
      r.epoch = std::stoi(f[3]);
      r.l_ce = std::stod(f[4]);
      r.l_kl = std::stod(f[5]);
      r.l_d = std::stod(f[6]);
      r.lr = std::stod(f[7]);
    }
    r.wall_ms = std::stod(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

features::FeatureMap soft_labels_as_map(const ad::Tensor<float>& values, double temperature) {
  features::FeatureMap fm(1, values.dim(0), values.dim(1), features::Representation::kLogMel64);
  fm.data = values.storage();
  fm.hop_seconds = static_cast<float>(temperature);
  return fm;
}

EnsemblePrediction ensemble_mean(std::span<const std::vector<double>> probabilities) {
  if (probabilities.empty()) fail(ErrorKind::kParameter, "ensemble: no branches");
  const std::size_t m = probabilities.front().size();
  EnsemblePrediction out;
  out.probabilities.assign(m, 0.0);
  for (const auto& p : probabilities) {
    if (p.size() != m) fail(ErrorKind::kShape, "ensemble: branches disagree on class count");
    for (std::size_t j = 0; j < m; ++j) out.probabilities[j] += p[j];
  }
  if (probabilities.size() > 1) {
    for (auto& v : out.probabilities) v /= static_cast<double>(probabilities.size());
  }
  out.label = eval::argmax(out.probabilities);
  return out;
}

EnsemblePrediction ensemble_predict(std::span<const eval::ClipScorer> branches, const audio::AudioClip& clip) {
  std::vector<std::vector<double>> probs;
  probs.reserve(branches.size());
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (!branches[i].model || !branches[i].extractor) {
      fail(ErrorKind::kMissingFeature, "ensemble: branch " + std::to_string(i) + " has no representation or model");
    }
    probs.push_back(eval::clip_probability(branches[i], clip));
  }
  return ensemble_mean(probs);
}

}  // namespace mrkd::distill
