#include "mrkd_cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "mrkd/rng.hpp"

namespace mrkd::cli {

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string out = "invalid configuration (" + std::to_string(v.size()) + " problem" + (v.size() == 1 ? "" : "s") + ")";
  for (const auto& s : v) out += "\n  - " + s;
  return out;
}

// Reads typed fields from one table and records every problem instead of
// stopping at the first.
class Reader {
 public:
  Reader(const toml::table& table, std::string section, std::vector<std::string>& errors)
      : table_(table), section_(std::move(section)), errors_(errors) {}

  void unknown_keys(std::initializer_list<std::string_view> allowed) {
    const std::set<std::string_view> ok(allowed);
    for (auto&& [k, v] : table_) {
      if (!ok.count(k.str())) errors_.push_back(where(std::string(k.str())) + ": unknown key");
    }
  }

  void str(std::string_view key, std::string& out) {
    if (const auto* n = table_.get(key)) {
      if (auto v = n->value<std::string>(); v && n->is_string()) out = *v;
      else errors_.push_back(where(key) + ": expected a string");
    }
  }

  template <typename Int>
  void integer(std::string_view key, Int& out, std::int64_t min_value) {
    if (const auto* n = table_.get(key)) {
      if (!n->is_integer()) {
        errors_.push_back(where(key) + ": expected an integer");
        return;
      }
      const auto v = *n->value<std::int64_t>();
      if (v < min_value) {
        errors_.push_back(where(key) + ": must be >= " + std::to_string(min_value) + ", got " + std::to_string(v));
        return;
      }
      out = static_cast<Int>(v);
    }
  }

  void real(std::string_view key, double& out) {
    if (const auto* n = table_.get(key)) {
      if (n->is_floating_point() || n->is_integer()) out = *n->value<double>();
      else errors_.push_back(where(key) + ": expected a number");
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const auto* n = table_.get(key)) {
      if (n->is_boolean()) out = *n->value<bool>();
      else errors_.push_back(where(key) + ": expected true or false");
    }
  }

  void size_list(std::string_view key, std::vector<std::size_t>& out) {
    const auto* n = table_.get(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) {
      errors_.push_back(where(key) + ": expected an array of integers");
      return;
    }
    std::vector<std::size_t> values;
    for (const auto& e : *arr) {
      if (!e.is_integer() || *e.value<std::int64_t>() < 1) {
        errors_.push_back(where(key) + ": entries must be integers >= 1");
        return;
      }
      values.push_back(static_cast<std::size_t>(*e.value<std::int64_t>()));
    }
    out = std::move(values);
  }

  bool has(std::string_view key) const { return table_.get(key) != nullptr; }

  std::string where(std::string_view key) const { return section_ + "." + std::string(key); }

 private:
  const toml::table& table_;
  std::string section_;
  std::vector<std::string>& errors_;
};

const toml::table* section(const toml::table& root, std::string_view name, std::vector<std::string>& errors) {
  const auto* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) {
    errors.push_back(std::string(name) + ": expected a table");
    return nullptr;
  }
  return n->as_table();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : Error(ErrorKind::kConfig, join_lines(violations)), violations_(std::move(violations)) {}

distill::DistillationSchedule RunConfig::schedule() const {
  distill::DistillationSchedule s;
  s.cycles = cycles;
  s.branch_epochs = branch_epochs;
  s.distill_epochs = distill_epochs;
  s.temperature = temperature;
  s.batch_size = batch_size;
  s.total_epoch_budget = total_epochs;
  s.warmup_cycles = warmup_cycles;
  return s;
}

std::filesystem::path RunConfig::feature_root() const {
  return features_dir.empty() ? work_dir / "features" : features_dir;
}

std::uint64_t RunConfig::branch_seed(std::size_t i) const { return derive_seed({seed, branches.at(i).seed}); }

std::size_t RunConfig::window_frames(std::size_t branch) const {
  const auto& f = branches.at(branch).features;
  return features::frame_count(canonical_length, f.frame_len, f.hop);
}

std::string feature_dir_name(const features::FeatureConfig& config) {
  std::string name = std::string(features::to_string(config.representation)) + "_c" + std::to_string(config.channels);
  if (config.mel_scale == features::MelScale::kHtk) name += "_htk";
  return name;
}

RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& err) {
    std::ostringstream msg;
    msg << "TOML syntax error at line " << err.source().begin.line << ", column " << err.source().begin.column << ": "
        << err.description();
    throw ConfigError({msg.str()});
  }

  std::vector<std::string> errors;
  RunConfig cfg;
  for (auto&& [k, v] : root) {
    static const std::set<std::string_view> known{"dataset", "branch", "training", "distillation", "output"};
    if (!known.count(k.str())) errors.push_back(std::string(k.str()) + ": unknown section");
  }

  if (const auto* t = section(root, "dataset", errors)) {
    Reader r(*t, "dataset", errors);
    r.unknown_keys({"manifest", "canonical_length", "sample_rate", "seed"});
    std::string manifest;
    r.str("manifest", manifest);
    if (!manifest.empty()) cfg.manifest = resolve(base_dir, manifest);
    r.integer("canonical_length", cfg.canonical_length, 1);
    r.real("sample_rate", cfg.sample_rate);
    r.integer("seed", cfg.seed, 0);
  }

  if (const auto* n = root.get("branch")) {
    const auto* arr = n->as_array();
    if (!arr) {
      errors.push_back("branch: expected [[branch]] tables");
    } else {
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto* t = (*arr)[i].as_table();
        const std::string where = "branch[" + std::to_string(i) + "]";
        if (!t) {
          errors.push_back(where + ": expected a table");
          continue;
        }
        Reader r(*t, where, errors);
        r.unknown_keys({"id", "representation", "channels", "family", "stage_channels", "blocks_per_stage", "seed",
                        "mel_scale"});
        BranchConfig b;
        std::string rep = "logmel64";
        r.str("representation", rep);
        try {
          b.features = features::FeatureConfig::defaults_for(features::parse_representation(rep));
        } catch (const Error&) {
          errors.push_back(r.where("representation") + ": unknown representation '" + rep +
                           "' (logmel64, logmel128, mfcc, cqt)");
        }
        b.id = std::string(features::to_string(b.features.representation));
        r.str("id", b.id);
        r.integer("channels", b.features.channels, 1);
        std::string scale = "slaney";
        r.str("mel_scale", scale);
        if (scale == "htk") b.features.mel_scale = features::MelScale::kHtk;
        else if (scale != "slaney") errors.push_back(r.where("mel_scale") + ": '" + scale + "', expected 'slaney' or 'htk'");
        std::string family = "resnet_small";
        r.str("family", family);
        try {
          b.model.family = models::parse_family(family);
        } catch (const Error&) {
          errors.push_back(r.where("family") + ": unknown family '" + family + "' (vgg_small, resnet_small)");
        }
        r.size_list("stage_channels", b.model.stage_channels);
        r.integer("blocks_per_stage", b.model.blocks_per_stage, 1);
        r.integer("seed", b.seed, 0);
        if (!r.has("seed")) b.seed = i;
        cfg.branches.push_back(std::move(b));
      }
    }
  }

  if (const auto* t = section(root, "training", errors)) {
    Reader r(*t, "training", errors);
    r.unknown_keys({"base_lr", "momentum", "batch_size", "total_epochs", "mixup", "mixup_alpha"});
    r.real("base_lr", cfg.training.base_lr);
    r.real("momentum", cfg.training.momentum);
    r.integer("batch_size", cfg.batch_size, 1);
    r.integer("total_epochs", cfg.total_epochs, 1);
    r.boolean("mixup", cfg.training.mixup);
    r.real("mixup_alpha", cfg.training.mixup_alpha);
  }

  if (const auto* t = section(root, "distillation", errors)) {
    Reader r(*t, "distillation", errors);
    r.unknown_keys({"cycles", "branch_epochs", "distill_epochs", "temperature", "kl_direction", "kl_t2_scaling",
                    "warmup_cycles"});
    r.integer("cycles", cfg.cycles, 1);
    r.integer("branch_epochs", cfg.branch_epochs, 1);
    r.integer("distill_epochs", cfg.distill_epochs, 1);
    r.real("temperature", cfg.temperature);
    std::string dir = "forward";
    r.str("kl_direction", dir);
    if (dir == "reverse") cfg.training.kl_direction = ad::KlDirection::kReverse;
    else if (dir != "forward") errors.push_back(r.where("kl_direction") + ": '" + dir + "', expected 'forward' or 'reverse'");
    r.boolean("kl_t2_scaling", cfg.training.kl_t2_scaling);
    r.integer("warmup_cycles", cfg.warmup_cycles, 0);
  }

  if (const auto* t = section(root, "output", errors)) {
    Reader r(*t, "output", errors);
    r.unknown_keys({"work_dir", "features_dir"});
    std::string wd, fd;
    r.str("work_dir", wd);
    r.str("features_dir", fd);
    if (!wd.empty()) cfg.work_dir = resolve(base_dir, wd);
    if (!fd.empty()) cfg.features_dir = resolve(base_dir, fd);
  }

  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
  cfg.source = std::filesystem::absolute(path);
  return cfg;
}

void apply_overrides(RunConfig& config, const Overrides& overrides, const char* env_work_dir) {
  if (overrides.desk_scale) {
    config.total_epochs = 40;
    config.cycles = 20;
    config.branch_epochs = 1;
    config.distill_epochs = 1;
  }
  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.work_dir) {
    config.work_dir = std::filesystem::absolute(*overrides.work_dir).lexically_normal();
  } else if (config.work_dir.empty() && env_work_dir && *env_work_dir) {
    config.work_dir = std::filesystem::absolute(env_work_dir).lexically_normal();
  }
}

std::vector<std::string> validate(const RunConfig& c, bool check_paths) {
  std::vector<std::string> errors;
  if (c.manifest.empty()) errors.push_back("dataset.manifest: required");
  else if (check_paths && !std::filesystem::is_regular_file(c.manifest)) {
    errors.push_back("dataset.manifest: file not found: " + c.manifest.string() +
                     " (run `mrkd gen-synthetic` or point it at an existing manifest)");
  }
  if (!(c.sample_rate > 0)) errors.push_back("dataset.sample_rate: must be > 0");
  if (c.work_dir.empty()) errors.push_back("output.work_dir: not set (use --work-dir, output.work_dir or MRKD_WORK_DIR)");
  if (c.branches.empty()) errors.push_back("branch: at least one [[branch]] is required");

  std::set<std::string> ids;
  for (std::size_t i = 0; i < c.branches.size(); ++i) {
    const auto& b = c.branches[i];
    const std::string where = "branch[" + std::to_string(i) + "]";
    if (b.id.empty() || b.id.find_first_of("/\\ \t,*") != std::string::npos || b.id == "." || b.id == "..") {
      errors.push_back(where + ".id: must be a non-empty name without separators, got '" + b.id + "'");
    } else if (!ids.insert(b.id).second) {
      errors.push_back(where + ".id: duplicate branch id '" + b.id + "'");
    }
    if (b.features.channels != 1 && b.features.channels != 3) errors.push_back(where + ".channels: must be 1 or 3");
    if (b.model.stage_channels.empty()) errors.push_back(where + ".stage_channels: must not be empty");
    if (features::frame_count(c.canonical_length, b.features.frame_len, b.features.hop) == 0) {
      errors.push_back(where + ": canonical_length is shorter than one analysis frame");
    }
  }

  const auto& t = c.training;
  if (!(t.base_lr > 0)) errors.push_back("training.base_lr: must be > 0");
  if (!(t.momentum >= 0 && t.momentum < 1)) errors.push_back("training.momentum: must be in [0, 1)");
  if (!(t.mixup_alpha > 0)) errors.push_back("training.mixup_alpha: must be > 0");
  if (!(c.temperature > 0)) errors.push_back("distillation.temperature: must be > 0");
  if (c.warmup_cycles > c.cycles) errors.push_back("distillation.warmup_cycles: exceeds cycles");
  const long long used = static_cast<long long>(c.cycles) * (c.branch_epochs + c.distill_epochs);
  if (used > c.total_epochs) {
    errors.push_back("distillation: cycles * (branch_epochs + distill_epochs) = " + std::to_string(used) +
                     " exceeds training.total_epochs = " + std::to_string(c.total_epochs));
  }
  return errors;
}

void validate_or_throw(const RunConfig& config, bool check_paths) {
  auto errors = validate(config, check_paths);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

std::string to_toml(const RunConfig& c) {
  toml::table root;
  root.insert("dataset", toml::table{{"manifest", c.manifest.string()},
                                     {"canonical_length", static_cast<std::int64_t>(c.canonical_length)},
                                     {"sample_rate", c.sample_rate},
                                     {"seed", static_cast<std::int64_t>(c.seed)}});
  toml::array branches;
  for (std::size_t i = 0; i < c.branches.size(); ++i) {
    const auto& b = c.branches[i];
    toml::array stages;
    for (auto s : b.model.stage_channels) stages.push_back(static_cast<std::int64_t>(s));
    branches.push_back(toml::table{
        {"id", b.id},
        {"representation", std::string(features::to_string(b.features.representation))},
        {"channels", static_cast<std::int64_t>(b.features.channels)},
        {"mel_scale", b.features.mel_scale == features::MelScale::kHtk ? "htk" : "slaney"},
        {"family", std::string(models::to_string(b.model.family))},
        {"stage_channels", stages},
        {"blocks_per_stage", static_cast<std::int64_t>(b.model.blocks_per_stage)},
        {"seed", static_cast<std::int64_t>(b.seed)},
    });
  }
  root.insert("branch", branches);
  root.insert("training", toml::table{{"base_lr", c.training.base_lr},
                                      {"momentum", c.training.momentum},
                                      {"batch_size", static_cast<std::int64_t>(c.batch_size)},
                                      {"total_epochs", c.total_epochs},
                                      {"mixup", c.training.mixup},
                                      {"mixup_alpha", c.training.mixup_alpha}});
  root.insert("distillation",
              toml::table{{"cycles", c.cycles},
                          {"branch_epochs", c.branch_epochs},
                          {"distill_epochs", c.distill_epochs},
                          {"temperature", c.temperature},
                          {"kl_direction", c.training.kl_direction == ad::KlDirection::kReverse ? "reverse" : "forward"},
                          {"kl_t2_scaling", c.training.kl_t2_scaling},
                          {"warmup_cycles", c.warmup_cycles}});
  root.insert("output", toml::table{{"work_dir", c.work_dir.string()}, {"features_dir", c.feature_root().string()}});
  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

}  // namespace mrkd::cli
