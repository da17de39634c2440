// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   mrkd_acceptance [--work-dir DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include "suites.hpp"

namespace fs = std::filesystem;
using suites::Outcome;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs the installed tool with output captured to `log`; returns its exit code.
int tool(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MRKD_TOOL_PATH) + " " + args + " > " + quote(log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string tail(const fs::path& p) {
  const auto text = slurp(p);
  return text.size() > 600 ? "..." + text.substr(text.size() - 600) : text;
}

struct Metrics {
  double accuracy = -1, map3 = -1;
};

// Reads `<name>,accuracy,,v` and `<name>,map_at_3,,v` from a report CSV.
Metrics read_metrics(const fs::path& csv) {
  Metrics m;
  std::ifstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() < 4) continue;
    if (f[1] == "accuracy") m.accuracy = std::stod(f[3]);
    if (f[1] == "map_at_3") m.map3 = std::stod(f[3]);
  }
  return m;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Corpus, config and feature cache shared by criteria 4 and 6.
struct Corpus {
  fs::path root;
  fs::path config;
  fs::path features;
  bool ready = false;
  std::string error;
  double setup_seconds = 0;
};

void write_config(const fs::path& path, const fs::path& manifest, const fs::path& features, int cycles = 0,
                  int total_epochs = 0) {
  std::ofstream out(path);
  out << "[dataset]\nmanifest = \"" << manifest.string() << "\"\n\n";
  for (const char* rep : {"logmel64", "mfcc"}) {
    out << "[[branch]]\nid = \"" << rep << "\"\nrepresentation = \"" << rep << "\"\nfamily = \"resnet_small\"\n\n";
  }
  if (total_epochs) out << "[training]\ntotal_epochs = " << total_epochs << "\n\n";
  if (cycles) out << "[distillation]\ncycles = " << cycles << "\n\n";
  out << "[output]\nfeatures_dir = \"" << features.string() << "\"\n";
}

Corpus& corpus(const fs::path& work) {
  static Corpus c;
  static bool attempted = false;
  if (attempted) return c;
  attempted = true;
  const auto start = Clock::now();
  c.root = work / "corpus";
  c.features = c.root / "features";
  c.config = c.root / "run.toml";
  fs::create_directories(c.root);
  const auto data = c.root / "data";
  if (int rc = tool("gen-synthetic --classes 10 --clips-per-class 100 --seed 7 --out " + quote(data),
                    c.root / "gen.log");
      rc != 0) {
    c.error = "gen-synthetic exit " + std::to_string(rc) + ": " + tail(c.root / "gen.log");
    return c;
  }
  write_config(c.config, data / "manifest.csv", c.features);
  if (int rc = tool("--config " + quote(c.config) + " --work-dir " + quote(c.root / "extract_run") + " extract",
                    c.root / "extract.log");
      rc != 0) {
    c.error = "extract exit " + std::to_string(rc) + ": " + tail(c.root / "extract.log");
    return c;
  }
  c.ready = true;
  c.setup_seconds = seconds_since(start);
  return c;
}

std::size_t workers_for(std::size_t branches) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(hw, branches);
}

// Criterion 4: repeated single-worker runs are byte-identical; a multi-worker
// run scores identically.
Outcome determinism(const fs::path& work) {
  Outcome out;
  auto& c = corpus(work);
  if (!c.ready) {
    out.require(false, "corpus setup failed: " + c.error);
    return out;
  }
  const auto dir = work / "determinism";
  fs::create_directories(dir);
  // Same corpus and models as the end-to-end run, shorter schedule.
  const auto cfg = dir / "run.toml";
  write_config(cfg, c.root / "data" / "manifest.csv", c.features, 2, 4);
  const std::string base = "--config " + quote(cfg) + " --seed 11";
  struct Run {
    std::string name;
    std::size_t workers;
  };
  const std::vector<Run> runs{{"w1_a", 1}, {"w1_b", 1}, {"w2", 2}};
  for (const auto& r : runs) {
    const auto wd = dir / r.name;
    const std::string common = base + " --work-dir " + quote(wd) + " --workers " + std::to_string(r.workers);
    int rc = tool(common + " distill", dir / (r.name + ".distill.log"));
    if (rc == 0) rc = tool(common + " evaluate --source distill", dir / (r.name + ".eval.log"));
    if (rc == 0) rc = tool(common + " ensemble-eval", dir / (r.name + ".ens.log"));
    out.require(rc == 0, r.name + ": tool exit " + std::to_string(rc) + ": " + tail(dir / (r.name + ".distill.log")));
    if (rc != 0) return out;
  }
  for (const char* branch : {"logmel64", "mfcc"}) {
    const auto a = slurp(dir / "w1_a" / "distill" / branch / "final.mrkp");
    const auto b = slurp(dir / "w1_b" / "distill" / branch / "final.mrkp");
    const auto p = slurp(dir / "w2" / "distill" / branch / "final.mrkp");
    out.require(!a.empty() && a == b, std::string(branch) + ": workers=1 checkpoints differ between runs");
    out.require(a == p, std::string(branch) + ": workers=2 checkpoint differs from workers=1");
  }
  for (const char* report : {"distill_logmel64.csv", "distill_mfcc.csv", "distill_ensemble.csv"}) {
    const auto a = slurp(dir / "w1_a" / "metrics" / report);
    const auto p = slurp(dir / "w2" / "metrics" / report);
    out.require(!a.empty() && a == p, std::string(report) + ": metrics differ between workers=1 and workers=2");
  }
  const auto m = read_metrics(dir / "w1_a" / "metrics" / "distill_ensemble.csv");
  out.note("3 runs of Q=2; final checkpoints compared byte for byte; ensemble acc " + fmt("%.3f", m.accuracy));
  return out;
}

// Criterion 6: cycles versus independent training on the synthetic corpus.
Outcome end_to_end(const fs::path& work, double& elapsed) {
  Outcome out;
  const auto start = Clock::now();
  auto& c = corpus(work);
  if (!c.ready) {
    out.require(false, "corpus setup failed: " + c.error);
    return out;
  }
  const auto dir = work / "end_to_end";
  fs::create_directories(dir);
  const std::vector<std::string> branches{"logmel64", "mfcc"};
  const std::vector<int> seeds{1, 2, 3};
  std::map<std::string, std::vector<double>> distilled, independent;
  std::vector<double> ensemble, best_distilled;
  const std::size_t workers = workers_for(branches.size());
  for (int seed : seeds) {
    const auto wd = dir / ("seed_" + std::to_string(seed));
    const std::string common = "--config " + quote(c.config) + " --work-dir " + quote(wd) + " --seed " +
                               std::to_string(seed) + " --workers " + std::to_string(workers) + " --desk-scale";
    const auto seed_start = Clock::now();
    for (const char* step : {"distill", "train", "evaluate", "ensemble-eval"}) {
      const auto log = dir / ("seed_" + std::to_string(seed) + "." + step + ".log");
      const int rc = tool(common + " " + step, log);
      if (rc != 0) {
        out.require(false, "seed " + std::to_string(seed) + " " + step + ": exit " + std::to_string(rc) + ": " + tail(log));
        return out;
      }
    }
    double best = 0;
    std::string line = "seed " + std::to_string(seed) + ":";
    for (const auto& b : branches) {
      const auto d = read_metrics(wd / "metrics" / ("distill_" + b + ".csv"));
      const auto t = read_metrics(wd / "metrics" / ("train_" + b + ".csv"));
      distilled[b].push_back(d.accuracy);
      independent[b].push_back(t.accuracy);
      best = std::max(best, d.accuracy);
      line += " " + b + " distill " + fmt("%.3f", d.accuracy) + " / train " + fmt("%.3f", t.accuracy) + ";";
      for (const auto& [name, m] : {std::pair{"distill_" + b, d}, std::pair{"train_" + b, t}}) {
        out.require(m.accuracy >= 0 && m.map3 >= m.accuracy,
                    "seed " + std::to_string(seed) + " " + name + ": map@3 " + fmt("%.4f", m.map3) + " < accuracy " +
                        fmt("%.4f", m.accuracy));
      }
    }
    const auto e = read_metrics(wd / "metrics" / "distill_ensemble.csv");
    out.require(e.accuracy >= 0 && e.map3 >= e.accuracy, "seed " + std::to_string(seed) + " ensemble: map@3 < accuracy");
    ensemble.push_back(e.accuracy);
    best_distilled.push_back(best);
    line += " ensemble " + fmt("%.3f", e.accuracy) + " (" + fmt("%.0f", seconds_since(seed_start)) + " s)";
    std::cout << "    " << line << std::endl;
  }
  for (const auto& b : branches) {
    const double md = median(distilled[b]), mi = median(independent[b]);
    out.note(b + " median distilled " + fmt("%.3f", md) + " vs independent " + fmt("%.3f", mi));
    out.require(md >= mi - 0.010, b + ": median distilled " + fmt("%.4f", md) + " < median independent " +
                                      fmt("%.4f", mi) + " - 0.010");
  }
  const double me = median(ensemble), mb = median(best_distilled);
  out.note("median ensemble " + fmt("%.3f", me) + " vs best distilled " + fmt("%.3f", mb));
  out.require(me >= mb - 0.005,
              "median ensemble " + fmt("%.4f", me) + " < median best distilled " + fmt("%.4f", mb) + " - 0.005");
  elapsed = seconds_since(start);
  // includes corpus generation and extraction when this criterion ran first
  out.note("wall " + fmt("%.0f", elapsed) + " s on " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) +
           " core(s), workers " + std::to_string(workers));
  out.require(elapsed <= 30 * 60, "runtime " + fmt("%.0f", elapsed) + " s exceeds 30 min");
  return out;
}

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;  // 0: no separate limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "mrkd_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string x;
      while (std::getline(ss, x, ',')) only.insert(std::stoi(x));
    } else {
      std::cerr << "usage: mrkd_acceptance [--work-dir DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  work = fs::absolute(work);
  fs::remove_all(work);
  fs::create_directories(work);

  double e2e_seconds = 0;
  const std::vector<Criterion> criteria{
      {1, "gradient suite", 120, [] { return suites::gradient_suite(100); }},
      {2, "distillation math", 60, [] { return suites::distill_math_suite(); }},
      {3, "dsp oracles", 180, [] { return suites::dsp_suite(); }},
      {4, "determinism", 0, [&] { return determinism(work); }},
      {5, "degenerate frameworks", 0, [] { return suites::symmetry_suite(); }},
      {6, "end-to-end trend", 0, [&] { return end_to_end(work, e2e_seconds); }},
      {7, "metrics", 0, [] { return suites::metric_suite(); }},
      {8, "format round trips", 0, [&] { return suites::format_suite(work / "formats"); }},
  };

  int failed = 0;
  const auto total_start = Clock::now();
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(start);
    if (c.limit_seconds > 0 && secs > c.limit_seconds) {
      o.require(false, "runtime " + fmt("%.1f", secs) + " s exceeds " + fmt("%.0f", c.limit_seconds) + " s");
    }
    failed += !o.pass();
    std::cout << (o.pass() ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << " (" << fmt("%.1f", secs)
              << " s)";
    const auto summary = o.summary();
    if (!summary.empty()) std::cout << ": " << summary;
    std::cout << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << "(" << failed << " failing, " << fmt("%.0f", seconds_since(total_start))
            << " s total)" << std::endl;
  return failed ? 1 : 0;
}
