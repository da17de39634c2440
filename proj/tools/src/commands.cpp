#include "mrkd_cli/commands.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mrkd/eval.hpp"

namespace mrkd::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string work_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t workers = 1;
  bool desk_scale = false;
  bool dry_run = false;

  // gen-synthetic
  std::size_t classes = 10;
  std::size_t clips_per_class = 100;
  std::string out_dir;
  double snr_db = 10.0;

  // evaluate / ensemble-eval / export-logits
  std::string source;
  std::string split = "test";
};

[[noreturn]] void missing(const std::string& what, const std::string& command) {
  fail(ErrorKind::kMissingFeature, "missing prerequisite: " + what + " (run `mrkd " + command + "` first)");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

RunConfig resolve_config(const Options& o) {
  if (o.config.empty()) fail(ErrorKind::kConfig, "--config is required for this command");
  RunConfig cfg = load_config(o.config);
  Overrides ov;
  if (!o.work_dir.empty()) ov.work_dir = o.work_dir;
  if (o.seed_given) ov.seed = o.seed;
  ov.desk_scale = o.desk_scale;
  apply_overrides(cfg, ov, std::getenv("MRKD_WORK_DIR"));
  validate_or_throw(cfg, true);
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& command) {
  write_text(cfg.work_dir / ("resolved_config." + command + ".toml"), to_toml(cfg));
}

features::FeatureExtractor make_extractor(const RunConfig& cfg, std::size_t b) {
  auto fc = cfg.branches[b].features;
  fc.sample_rate = cfg.sample_rate;
  return features::FeatureExtractor(fc);
}

data::Split eval_split(const data::DatasetManifest& manifest, const std::string& requested) {
  const auto split = data::parse_split(requested);
  if (manifest.indices(split).empty()) {
    fail(ErrorKind::kManifest, "manifest has no rows in split '" + requested + "'");
  }
  return split;
}

std::vector<std::string> sources_for(const Options& o, const std::string& fallback) {
  const std::string s = o.source.empty() ? fallback : o.source;
  if (s == "all") return {"train", "distill"};
  return {s};
}

models::ModelConfig model_config(const RunConfig& cfg, const data::DatasetManifest& manifest, std::size_t b) {
  auto mc = cfg.branches[b].model;
  mc.input_channels = cfg.branches[b].features.channels;
  mc.n_classes = manifest.n_classes();
  return mc;
}

distill::Branch make_branch(const RunConfig& cfg, const data::DatasetManifest& manifest, std::size_t b) {
  distill::BranchSpec spec;
  spec.branch_id = cfg.branches[b].id;
  spec.representation = cfg.branches[b].features.representation;
  spec.model = model_config(cfg, manifest, b);
  spec.seed = cfg.branch_seed(b);
  return distill::Branch(std::move(spec), cfg.training, cfg.schedule().total_epochs());
}

std::vector<distill::Branch> load_branches(const RunConfig& cfg, const data::DatasetManifest& manifest,
                                           const std::string& source, bool must_exist, std::vector<std::size_t>& ids) {
  std::vector<distill::Branch> out;
  ids.clear();
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    const auto path = checkpoint_path(cfg, source, b);
    if (!fs::exists(path)) {
      if (must_exist) missing("checkpoint " + path.string(), source);
      continue;
    }
    auto branch = make_branch(cfg, manifest, b);
    branch.load_state(ad::load_checkpoint(path));
    out.push_back(std::move(branch));
    ids.push_back(b);
  }
  return out;
}

void check_feature_prerequisites(const RunConfig& cfg, const data::DatasetManifest& manifest) {
  const auto train = manifest.indices(data::Split::kTrain);
  if (train.empty()) fail(ErrorKind::kManifest, "manifest has no train rows");
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    if (!fs::exists(standardizer_path(cfg, b))) {
      missing("feature cache for branch " + cfg.branches[b].id + " in " + feature_dir(cfg, b).string(), "extract");
    }
    for (auto i : train) {
      const auto p = cache_path(cfg, b, manifest.entries[i]);
      if (!fs::exists(p)) missing("cached features for " + manifest.entries[i].raw_path, "extract");
    }
  }
}

struct LogSink {
  std::ofstream file;
  std::ostream* console;

  LogSink(const fs::path& path, std::ostream& out) : file(path, std::ios::trunc), console(&out) {
    if (!file) fail(ErrorKind::kIo, "cannot write " + path.string());
    distill::write_log_header(file);
  }
  void operator()(const distill::EpochRecord& r) {
    distill::write_log_record(file, r);
    file.flush();
    char line[256];
    if (r.phase == distill::Phase::kFuse) {
      std::snprintf(line, sizeof line, "cycle %d fuse (%.0f ms)\n", r.cycle, r.wall_ms);
    } else {
      std::snprintf(line, sizeof line, "cycle %d %s %s epoch %d l_ce %.4f l_kl %.4f l_d %.4f lr %.6f (%.0f ms)\n",
                    r.cycle, std::string(distill::to_string(r.phase)).c_str(), r.branch_id.c_str(), r.epoch, r.l_ce,
                    r.l_kl, r.l_d, r.lr, r.wall_ms);
    }
    *console << line << std::flush;
  }
};

// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const Options& o, std::ostream& out) {
  data::SyntheticOptions so;
  so.n_classes = o.classes;
  so.clips_per_class = o.clips_per_class;
  so.seed = o.seed_given ? o.seed : 7;
  so.snr_db = o.snr_db;
  fs::path dir = o.out_dir;
  if (dir.empty()) {
    fs::path wd = o.work_dir;
    if (wd.empty()) {
      if (const char* env = std::getenv("MRKD_WORK_DIR"); env && *env) wd = env;
    }
    if (wd.empty()) fail(ErrorKind::kConfig, "gen-synthetic: pass --out, --work-dir or set MRKD_WORK_DIR");
    dir = wd / "data";
  }
  if (so.n_classes < 2) fail(ErrorKind::kParameter, "gen-synthetic: --classes must be >= 2");
  if (so.clips_per_class < 1) fail(ErrorKind::kParameter, "gen-synthetic: --clips-per-class must be >= 1");
  if (o.dry_run) {
    out << "dry run: would write " << so.n_classes * so.clips_per_class << " clips and a manifest under " << dir.string()
        << "\n";
    return kExitOk;
  }
  const auto manifest = data::gen_synthetic(dir, so);
  out << "wrote " << manifest.entries.size() << " clips and " << (dir / "manifest.csv").string() << "\n";
  return kExitOk;
}

int cmd_extract(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const auto manifest = data::load_manifest(cfg.manifest);
  if (o.dry_run) {
    for (const auto& e : manifest.entries) {
      if (!fs::is_regular_file(e.path)) fail(ErrorKind::kManifest, "audio file not found: " + e.path.string());
    }
    out << "dry run: extract ok (" << manifest.entries.size() << " clips, " << cfg.branches.size() << " branches)\n";
    return kExitOk;
  }
  echo_config(cfg, "extract");

  // Branches that share a feature configuration share one cache directory.
  std::map<std::string, std::size_t> unique;
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) unique.emplace(feature_dir_name(cfg.branches[b].features), b);

  std::set<std::string> keys;
  for (const auto& e : manifest.entries) {
    if (!keys.insert(clip_key(e)).second) fail(ErrorKind::kManifest, "two manifest rows map to cache key " + clip_key(e));
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<audio::AudioClip> clips(manifest.entries.size());
  parallel_for(clips.size(), o.workers, [&](std::size_t i) {
    auto clip = load_clip(cfg, manifest.entries[i]);
    if (clip.samples.size() < cfg.canonical_length) {
      clip = audio::pad_or_crop(clip, cfg.canonical_length, audio::CropMode::kEvalCenter);
    }
    clips[i] = std::move(clip);
  });

  const auto train = manifest.indices(data::Split::kTrain);
  for (const auto& [name, b] : unique) {
    const auto extractor = make_extractor(cfg, b);
    const auto dir = feature_dir(cfg, b);
    ensure_dir(dir);
    std::vector<features::FeatureMap> maps(clips.size());
    parallel_for(clips.size(), o.workers, [&](std::size_t i) {
      maps[i] = extractor(clips[i]);
      maps[i].clip_id = manifest.entries[i].raw_path;
      features::cache_write(maps[i], cache_path(cfg, b, manifest.entries[i]));
    });
    if (!train.empty()) {
      std::vector<features::FeatureMap> train_maps;
      train_maps.reserve(train.size());
      for (auto i : train) train_maps.push_back(std::move(maps[i]));
      const auto stats = features::Standardizer::fit(train_maps);
      features::cache_write(stats.to_map(extractor.config().representation), standardizer_path(cfg, b));
    }
    out << "extracted " << clips.size() << " clips -> " << dir.string() << "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  out << "extract done in " << buf << " s\n";
  return kExitOk;
}

int cmd_train_or_distill(const Options& o, std::ostream& out, bool distilling) {
  const RunConfig cfg = resolve_config(o);
  const auto manifest = data::load_manifest(cfg.manifest);
  check_feature_prerequisites(cfg, manifest);
  const auto schedule = cfg.schedule();
  schedule.validate();
  const std::string source = distilling ? "distill" : "train";
  if (o.dry_run) {
    out << "dry run: " << source << " ok (" << cfg.branches.size() << " branches, " << schedule.total_epochs()
        << " epochs each)\n";
    return kExitOk;
  }
  echo_config(cfg, source);

  std::vector<distill::FeatureSet> sets;
  std::vector<distill::Branch> branches;
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    sets.push_back(load_feature_set(cfg, b, manifest));
    branches.push_back(make_branch(cfg, manifest, b));
    out << "branch " << cfg.branches[b].id << ": " << branches.back().model().parameter_count()
        << " parameters, seed " << cfg.branch_seed(b) << "\n";
  }
  std::vector<const distill::FeatureSet*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);

  const fs::path dir = cfg.work_dir / source;
  ensure_dir(dir);
  LogSink sink(dir / "training_log.tsv", out);
  distill::RunOptions run;
  run.workers = o.workers;
  run.on_record = [&sink](const distill::EpochRecord& r) { sink(r); };

  const auto start = std::chrono::steady_clock::now();
  if (distilling) {
    run.checkpoint_dir = dir;
    distill::run_cycles(branches, ptrs, schedule, cfg.training, run);
  } else {
    distill::train_independent(branches, ptrs, schedule, cfg.training, run);
  }
  for (std::size_t b = 0; b < branches.size(); ++b) {
    ad::save_checkpoint(checkpoint_path(cfg, source, b), branches[b].state());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", secs);
  out << source << " done in " << buf << " s; final checkpoints under " << dir.string() << "\n";
  return kExitOk;
}

// Probabilities of every clip in `rows` for each loaded branch.
std::vector<std::vector<std::vector<double>>> score_rows(const RunConfig& cfg, std::vector<distill::Branch>& branches,
                                                        const std::vector<std::size_t>& ids,
                                                        const data::DatasetManifest& manifest,
                                                        const std::vector<std::size_t>& rows, std::size_t workers) {
  std::vector<audio::AudioClip> clips(rows.size());
  parallel_for(rows.size(), workers, [&](std::size_t i) { clips[i] = load_clip(cfg, manifest.entries[rows[i]]); });
  std::vector<std::vector<std::vector<double>>> probs(branches.size());
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const std::size_t b = ids[k];
    const auto extractor = make_extractor(cfg, b);
    const auto stats = features::Standardizer::from_map(features::cache_read(standardizer_path(cfg, b)));
    const eval::ClipScorer scorer{&branches[k].model(), &extractor, &stats, cfg.canonical_length};
    probs[k].resize(rows.size());
    // Eval-mode forward only reads the model, so rows can be scored concurrently.
    parallel_for(rows.size(), workers, [&](std::size_t i) { probs[k][i] = eval::clip_probability(scorer, clips[i]); });
  }
  return probs;
}

void write_report(const RunConfig& cfg, const eval::MetricsReport& report, const std::string& name,
                  std::ostream& out) {
  const auto dir = cfg.work_dir / "metrics";
  ensure_dir(dir);
  std::ostringstream text, csv;
  eval::write_report_text(text, report, name);
  eval::write_report_csv(csv, report, name);
  write_text(dir / (name + ".txt"), text.str());
  write_text(dir / (name + ".csv"), csv.str());
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s accuracy %.4f  map@3 %.4f  (n=%zu)\n", name.c_str(), report.accuracy,
                report.map_at_3, report.n_evaluated);
  out << buf;
}

int cmd_evaluate(const Options& o, std::ostream& out, bool ensemble) {
  const RunConfig cfg = resolve_config(o);
  const auto manifest = data::load_manifest(cfg.manifest);
  const auto split = eval_split(manifest, o.split);
  const auto rows = manifest.indices(split);
  std::vector<std::size_t> truths;
  for (auto r : rows) truths.push_back(manifest.entries[r].label);
  const auto sources = sources_for(o, ensemble ? "distill" : "all");
  bool any = false;
  for (const auto& source : sources) {
    if (source != "train" && source != "distill") fail(ErrorKind::kParameter, "--source must be train, distill or all");
    const bool required = ensemble || !o.source.empty();
    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
      if (!fs::exists(standardizer_path(cfg, b))) missing("feature statistics for " + cfg.branches[b].id, "extract");
      if (required && !fs::exists(checkpoint_path(cfg, source, b))) {
        missing("checkpoint " + checkpoint_path(cfg, source, b).string(), source);
      }
    }
    if (o.dry_run) continue;
    std::vector<std::size_t> ids;
    auto branches = load_branches(cfg, manifest, source, required, ids);
    if (branches.empty()) continue;
    any = true;
    const auto probs = score_rows(cfg, branches, ids, manifest, rows, o.workers);
    if (ensemble) {
      std::vector<std::vector<double>> mean(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<std::vector<double>> per;
        for (const auto& p : probs) per.push_back(p[i]);
        mean[i] = distill::ensemble_mean(per).probabilities;
      }
      write_report(cfg, eval::evaluate_probabilities(mean, truths, manifest.n_classes()), source + "_ensemble", out);
    } else {
      for (std::size_t k = 0; k < branches.size(); ++k) {
        write_report(cfg, eval::evaluate_probabilities(probs[k], truths, manifest.n_classes()),
                     source + "_" + cfg.branches[ids[k]].id, out);
      }
    }
  }
  if (o.dry_run) {
    out << "dry run: " << (ensemble ? "ensemble-eval" : "evaluate") << " ok\n";
    return kExitOk;
  }
  if (!any) missing("trained checkpoints under " + cfg.work_dir.string(), "train` or `mrkd distill");
  return kExitOk;
}

int cmd_export_logits(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const auto manifest = data::load_manifest(cfg.manifest);
  const auto split = eval_split(manifest, o.split);
  const auto rows = manifest.indices(split);
  const std::string source = o.source.empty() ? "distill" : o.source;
  if (source != "train" && source != "distill") fail(ErrorKind::kParameter, "--source must be train or distill");
  for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
    if (!fs::exists(checkpoint_path(cfg, source, b))) {
      missing("checkpoint " + checkpoint_path(cfg, source, b).string(), source);
    }
    if (!fs::exists(standardizer_path(cfg, b))) missing("feature statistics for " + cfg.branches[b].id, "extract");
  }
  if (o.dry_run) {
    out << "dry run: export-logits ok\n";
    return kExitOk;
  }
  std::vector<std::size_t> ids;
  auto branches = load_branches(cfg, manifest, source, true, ids);
  std::vector<audio::AudioClip> clips(rows.size());
  parallel_for(rows.size(), o.workers, [&](std::size_t i) { clips[i] = load_clip(cfg, manifest.entries[rows[i]]); });
  const auto dir = cfg.work_dir / "logits";
  ensure_dir(dir);
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const std::size_t b = ids[k];
    const auto extractor = make_extractor(cfg, b);
    const auto stats = features::Standardizer::from_map(features::cache_read(standardizer_path(cfg, b)));
    const eval::ClipScorer scorer{&branches[k].model(), &extractor, &stats, cfg.canonical_length};
    std::vector<eval::LogitsRow> table(rows.size());
    parallel_for(rows.size(), o.workers, [&](std::size_t i) {
      table[i] = {manifest.entries[rows[i]].raw_path, manifest.entries[rows[i]].label,
                  eval::clip_logits(scorer, clips[i])};
    });
    const auto path = dir / (source + "_" + cfg.branches[b].id + "_" + o.split + ".csv");
    eval::write_logits_csv(path, table);
    out << "wrote " << path.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kParameter:
      return kExitUsage;
    case ErrorKind::kMissingFeature:
      return kExitPrerequisite;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kDecode:
    case ErrorKind::kUnsupportedFormat:
    case ErrorKind::kInvalidInput:
    case ErrorKind::kCorruptCache:
    case ErrorKind::kShape:
    case ErrorKind::kInvalidDistribution:
    case ErrorKind::kAggregation:
    case ErrorKind::kManifest:
      return kExitData;
  }
  return kExitInternal;
}

std::string clip_key(const data::ManifestEntry& entry) {
  fs::path p(entry.raw_path);
  std::string s = p.replace_extension().generic_string();
  std::string key;
  key.reserve(s.size());
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    key += ch == '/' ? std::string("__") : std::string(1, ok ? ch : '_');
  }
  return key;
}

fs::path feature_dir(const RunConfig& config, std::size_t branch) {
  return config.feature_root() / feature_dir_name(config.branches.at(branch).features);
}

fs::path cache_path(const RunConfig& config, std::size_t branch, const data::ManifestEntry& entry) {
  return feature_dir(config, branch) / (clip_key(entry) + ".mrkd");
}

fs::path standardizer_path(const RunConfig& config, std::size_t branch) {
  return feature_dir(config, branch) / "standardizer.stats";
}

fs::path checkpoint_path(const RunConfig& config, const std::string& source, std::size_t branch) {
  return config.work_dir / source / config.branches.at(branch).id / "final.mrkp";
}

audio::AudioClip load_clip(const RunConfig& config, const data::ManifestEntry& entry) {
  auto clip = audio::load_wav(entry.path);
  clip.source_id = entry.raw_path;
  if (clip.sample_rate != config.sample_rate) clip = audio::resample_linear(clip, config.sample_rate);
  return clip;
}

distill::FeatureSet load_feature_set(const RunConfig& config, std::size_t branch,
                                     const data::DatasetManifest& manifest) {
  const auto stats_path = standardizer_path(config, branch);
  if (!fs::exists(stats_path)) missing("feature statistics " + stats_path.string(), "extract");
  const auto stats = features::Standardizer::from_map(features::cache_read(stats_path));
  const auto& fc = config.branches[branch].features;
  distill::FeatureSet set;
  set.n_classes = manifest.n_classes();
  set.window_frames = config.window_frames(branch);
  for (auto i : manifest.indices(data::Split::kTrain)) {
    const auto& e = manifest.entries[i];
    const auto path = cache_path(config, branch, e);
    if (!fs::exists(path)) missing("cached features for " + e.raw_path, "extract");
    auto fm = features::cache_read(path);
    if (fm.channels != fc.channels || fm.bins != fc.n_bins() || fm.tag != fc.representation) {
      fail(ErrorKind::kCorruptCache, "cache " + path.string() + " does not match the branch feature config; re-run `mrkd extract`");
    }
    fm.clip_id = e.raw_path;
    stats.apply(fm);
    set.maps.push_back(std::move(fm));
    set.labels.push_back(e.label);
  }
  return set;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"mrkd: multi-representation knowledge distillation for audio classification"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", o.config, "Run config (TOML)");
  app.add_option("--work-dir", o.work_dir, "Output directory (overrides the config and MRKD_WORK_DIR)");
  auto* seed_opt = app.add_option("--seed", o.seed, "Run seed (gen-synthetic: corpus seed, default 7)");
  app.add_option("--workers", o.workers, "Parallel workers; 1 is the deterministic reference")
      ->check(CLI::PositiveNumber);
  app.add_flag("--desk-scale", o.desk_scale, "Preset: total_epochs 40, cycles 20, b = d = 1");
  app.add_flag("--dry-run", o.dry_run, "Validate config and prerequisites, write nothing");

  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic tonal corpus and its manifest");
  gen->add_option("--classes", o.classes, "Number of classes");
  gen->add_option("--clips-per-class", o.clips_per_class, "Clips per class");
  gen->add_option("--out", o.out_dir, "Output directory (default <work-dir>/data)");
  gen->add_option("--snr-db", o.snr_db, "Signal-to-noise ratio in dB");
  auto* extract = app.add_subcommand("extract", "Compute and cache features for every branch");
  auto* train = app.add_subcommand("train", "Train each branch independently (baseline)");
  auto* distill_cmd = app.add_subcommand("distill", "Cyclic multi-branch distillation");
  auto* evaluate = app.add_subcommand("evaluate", "Per-branch metrics on the evaluation split");
  auto* ens = app.add_subcommand("ensemble-eval", "Metrics of the mean of all branch probabilities");
  auto* exp = app.add_subcommand("export-logits", "Write per-clip logits as CSV");
  for (auto* sc : {evaluate, ens, exp}) {
    sc->add_option("--source", o.source, "Which checkpoints: train, distill (or all for evaluate)")
        ->check(CLI::IsMember({"train", "distill", "all"}));
    sc->add_option("--split", o.split, "Manifest split to score")->check(CLI::IsMember({"train", "test", "val"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  o.seed_given = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_synthetic(o, out);
    if (extract->parsed()) return cmd_extract(o, out);
    if (train->parsed()) return cmd_train_or_distill(o, out, false);
    if (distill_cmd->parsed()) return cmd_train_or_distill(o, out, true);
    if (evaluate->parsed()) return cmd_evaluate(o, out, false);
    if (ens->parsed()) return cmd_evaluate(o, out, true);
    if (exp->parsed()) {
      if (o.source == "all") fail(ErrorKind::kParameter, "export-logits: --source must be train or distill");
      return cmd_export_logits(o, out);
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error [internal]: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace mrkd::cli
