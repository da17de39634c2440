#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "mrkd/error.hpp"
#include "mrkd_cli/commands.hpp"
#include "mrkd_cli/config.hpp"

using namespace mrkd;
using namespace mrkd::cli;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[dataset]
manifest = "data/manifest.csv"

[[branch]]
representation = "logmel64"

[output]
work_dir = "work"
)";

std::vector<std::string> violations_of(const std::string& toml) {
  try {
    parse_config(toml, "/base");
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    return e.violations();
  }
  ADD_FAILURE() << "accepted:\n" << toml;
  return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "mrkd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST(Config, DefaultsAndResolution) {
  const auto cfg = parse_config(kMinimal, "/base");
  EXPECT_EQ(cfg.manifest, fs::path("/base/data/manifest.csv"));
  EXPECT_EQ(cfg.work_dir, fs::path("/base/work"));
  EXPECT_EQ(cfg.feature_root(), fs::path("/base/work/features"));
  ASSERT_EQ(cfg.branches.size(), 1u);
  EXPECT_EQ(cfg.branches[0].id, "logmel64");
  EXPECT_EQ(cfg.branches[0].features.channels, 3u);
  EXPECT_EQ(cfg.batch_size, 64u);
  EXPECT_DOUBLE_EQ(cfg.training.base_lr, 0.001);
  EXPECT_DOUBLE_EQ(cfg.temperature, 2.0);
  EXPECT_EQ(cfg.window_frames(0), 143u);
  EXPECT_EQ(feature_dir_name(cfg.branches[0].features), "logmel64_c3");
  EXPECT_TRUE(validate(cfg, false).empty());
}

TEST(Config, EveryViolationReported) {
  const auto v = violations_of(R"(
[dataset]
manifest = 3
bogus = 1

[[branch]]
representation = "spectrogram"
family = "vgg19"

[training]
mixup = "yes"

[distillation]
kl_direction = "sideways"

[extra]
)");
  EXPECT_GE(v.size(), 6u);
  EXPECT_TRUE(mentions(v, "dataset.manifest"));
  EXPECT_TRUE(mentions(v, "bogus"));
  EXPECT_TRUE(mentions(v, "spectrogram"));
  EXPECT_TRUE(mentions(v, "vgg19"));
  EXPECT_TRUE(mentions(v, "training.mixup"));
  EXPECT_TRUE(mentions(v, "sideways"));
  EXPECT_TRUE(mentions(v, "extra"));
}

TEST(Config, SyntaxErrorNamesLine) {
  const auto v = violations_of("[dataset]\nmanifest = \"a\"\n[[branch\n");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(mentions(v, "line 3"));
}

TEST(Config, SemanticValidationListsAll) {
  auto cfg = parse_config(R"(
[[branch]]
id = "a/b"
[[branch]]
id = "x"
[[branch]]
id = "x"
[distillation]
cycles = 100
)", "/base");
  const auto v = validate(cfg, false);
  EXPECT_TRUE(mentions(v, "dataset.manifest"));
  EXPECT_TRUE(mentions(v, "output.work_dir"));
  EXPECT_TRUE(mentions(v, "branch[0].id"));
  EXPECT_TRUE(mentions(v, "duplicate branch id 'x'"));
  EXPECT_TRUE(mentions(v, "exceeds training.total_epochs"));
  try {
    validate_or_throw(cfg, false);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.violations(), v);
  }
}

TEST(Config, OverrideOrder) {
  const std::string no_work = "[dataset]\nmanifest = \"m.csv\"\n[[branch]]\n[distillation]\ncycles = 10\n";
  // file only
  auto c = parse_config(no_work, "/base");
  apply_overrides(c, {}, nullptr);
  EXPECT_EQ(c.cycles, 10);
  EXPECT_TRUE(c.work_dir.empty());
  // environment fills a missing work dir
  apply_overrides(c, {}, "/env/work");
  EXPECT_EQ(c.work_dir, fs::path("/env/work"));
  // desk-scale beats the file
  c = parse_config(no_work, "/base");
  Overrides desk;
  desk.desk_scale = true;
  apply_overrides(c, desk, nullptr);
  EXPECT_EQ(c.cycles, 20);
  EXPECT_EQ(c.total_epochs, 40);
  EXPECT_EQ(c.branch_epochs, 1);
  // the file's work dir beats the environment; the flag beats both
  c = parse_config(kMinimal, "/base");
  apply_overrides(c, {}, "/env/work");
  EXPECT_EQ(c.work_dir, fs::path("/base/work"));
  Overrides flag;
  flag.work_dir = "/flag/work";
  flag.seed = 5;
  apply_overrides(c, flag, "/env/work");
  EXPECT_EQ(c.work_dir, fs::path("/flag/work"));
  EXPECT_EQ(c.seed, 5u);
}

TEST(Config, EchoReparses) {
  auto cfg = parse_config(R"(
[dataset]
manifest = "data/manifest.csv"
seed = 4
[[branch]]
representation = "mfcc"
channels = 1
seed = 3
[[branch]]
id = "cqt_vgg"
representation = "cqt"
family = "vgg_small"
stage_channels = [8, 16]
[training]
mixup = false
[distillation]
cycles = 5
kl_direction = "reverse"
warmup_cycles = 2
[output]
work_dir = "w"
features_dir = "/shared/features"
)", "/base");
  const auto text = to_toml(cfg);
  const auto back = parse_config(text, "/elsewhere");
  EXPECT_EQ(to_toml(back), text);
  EXPECT_EQ(back.manifest, cfg.manifest);
  EXPECT_EQ(back.branches.size(), 2u);
  EXPECT_EQ(back.branches[1].id, "cqt_vgg");
  EXPECT_EQ(back.branches[1].model.stage_channels, (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(back.branches[0].seed, 3u);
  EXPECT_EQ(back.training.kl_direction, ad::KlDirection::kReverse);
  EXPECT_FALSE(back.training.mixup);
  EXPECT_EQ(back.feature_root(), fs::path("/shared/features"));
  EXPECT_NE(cfg.branch_seed(0), cfg.branch_seed(1));
}

TEST(Config, ClipKeys) {
  data::ManifestEntry e;
  e.raw_path = "audio/class 1/clip,a.wav";
  EXPECT_EQ(clip_key(e), "audio__class_1__clip_a");
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ErrorKind::kConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kMissingFeature), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kManifest), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::kNumeric), 5);
  EXPECT_EQ(exit_code_for(ErrorKind::kIo), 6);
}

TEST(Run, UsageErrors) {
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(invoke({"distill"}).code, kExitUsage);  // no --config
  EXPECT_EQ(invoke({"--workers", "0", "distill"}).code, kExitUsage);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
  const auto r = invoke({"distill", "--config", "/nonexistent/run.toml"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("/nonexistent/run.toml"), std::string::npos);
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / "mrkd_cli_pipeline";
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "run.toml";
    std::ofstream(config_) << R"(
[dataset]
manifest = "data/manifest.csv"

[[branch]]
representation = "logmel64"
channels = 1
stage_channels = [4, 8]
blocks_per_stage = 1

[[branch]]
representation = "mfcc"
channels = 1
stage_channels = [4, 8]
blocks_per_stage = 1

[training]
total_epochs = 2
batch_size = 8

[distillation]
cycles = 1

[output]
work_dir = "work"
)";
  }
  void TearDown() override { fs::remove_all(root_); }

  Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config_.string()});
    return invoke(std::move(args));
  }

  fs::path root_, config_;
};

TEST_F(Pipeline, MissingPrerequisitesAndDryRuns) {
  // no manifest yet: config validation fails
  EXPECT_EQ(cli({"extract"}).code, kExitUsage);
  ASSERT_EQ(invoke({"gen-synthetic", "--classes", "3", "--clips-per-class", "5", "--out",
                    (root_ / "data").string(), "--dry-run"}).code,
            kExitOk);
  EXPECT_EQ(count_files(root_ / "data"), 0u);
  const auto gen = invoke({"gen-synthetic", "--classes", "3", "--clips-per-class", "5", "--out",
                           (root_ / "data").string()});
  ASSERT_EQ(gen.code, kExitOk) << gen.err;
  EXPECT_EQ(count_files(root_ / "data"), 16u);  // 15 clips + manifest

  const auto before = cli({"distill"});
  EXPECT_EQ(before.code, kExitPrerequisite);
  EXPECT_NE(before.err.find("run `mrkd extract` first"), std::string::npos) << before.err;
  EXPECT_EQ(cli({"evaluate", "--source", "distill"}).code, kExitPrerequisite);

  EXPECT_EQ(cli({"--dry-run", "extract"}).code, kExitOk);
  EXPECT_FALSE(fs::exists(root_ / "work"));
  ASSERT_EQ(cli({"extract"}).code, kExitOk);
  EXPECT_TRUE(fs::exists(root_ / "work" / "resolved_config.extract.toml"));
  EXPECT_TRUE(fs::exists(root_ / "work" / "features" / "logmel64_c1" / "standardizer.stats"));

  const std::size_t files = count_files(root_ / "work");
  EXPECT_EQ(cli({"--dry-run", "distill"}).code, kExitOk);
  EXPECT_EQ(count_files(root_ / "work"), files);
  const auto ens = cli({"ensemble-eval"});
  EXPECT_EQ(ens.code, kExitPrerequisite);
  EXPECT_NE(ens.err.find("mrkd distill"), std::string::npos);

  ASSERT_EQ(cli({"distill"}).code, kExitOk);
  ASSERT_EQ(cli({"train"}).code, kExitOk);
  EXPECT_TRUE(fs::exists(root_ / "work" / "distill" / "logmel64" / "final.mrkp"));
  EXPECT_TRUE(fs::exists(root_ / "work" / "distill" / "mfcc" / "cycle_001_distill.mrkp"));
  EXPECT_TRUE(fs::exists(root_ / "work" / "train" / "mfcc" / "final.mrkp"));

  std::ifstream log(root_ / "work" / "distill" / "training_log.tsv");
  const auto records = distill::parse_log(log);
  EXPECT_EQ(records.size(), 2u + 1 + 2);

  const auto ev = cli({"evaluate"});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  for (const char* name : {"train_logmel64", "train_mfcc", "distill_logmel64", "distill_mfcc"}) {
    EXPECT_TRUE(fs::exists(root_ / "work" / "metrics" / (std::string(name) + ".txt"))) << name;
  }
  ASSERT_EQ(cli({"ensemble-eval"}).code, kExitOk);
  EXPECT_TRUE(fs::exists(root_ / "work" / "metrics" / "distill_ensemble.csv"));
  ASSERT_EQ(cli({"export-logits", "--source", "train"}).code, kExitOk);
  const auto rows = eval::read_logits_csv(root_ / "work" / "logits" / "train_mfcc_test.csv");
  EXPECT_EQ(rows.size(), 3u);  // one test clip per class
  for (const auto& r : rows) EXPECT_EQ(r.logits.size(), 3u);
  EXPECT_EQ(cli({"export-logits", "--source", "all"}).code, kExitUsage);
}

TEST(Binary, RunsAsASubprocess) {
  const std::string cmd = std::string(MRKD_TOOL_PATH) + " --help > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  const std::string bad = std::string(MRKD_TOOL_PATH) + " bogus > /dev/null 2>&1";
  const int status = std::system(bad.c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitUsage);
}
