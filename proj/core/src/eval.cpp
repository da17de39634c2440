#include "mrkd/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "mrkd/error.hpp"

namespace mrkd::eval {

std::vector<std::size_t> rank_labels(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::kInvalidInput, "argmax: empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double map_at_k(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths,
                std::size_t k) {
  if (rankings.size() != truths.size()) {
    fail(ErrorKind::kShape, "map_at_k: " + std::to_string(rankings.size()) + " rankings for " +
                                std::to_string(truths.size()) + " truths");
  }
  if (k == 0) fail(ErrorKind::kParameter, "map_at_k: k must be >= 1");
  if (rankings.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (r.size() < k) {
      fail(ErrorKind::kInvalidInput, "map_at_k: ranking " + std::to_string(i) + " has fewer than " +
                                         std::to_string(k) + " labels");
    }
    std::set<std::size_t> distinct(r.begin(), r.end());
    if (distinct.size() != r.size()) {
      fail(ErrorKind::kInvalidInput, "map_at_k: duplicate label in ranking " + std::to_string(i));
    }
    for (std::size_t rank = 0; rank < k; ++rank) {
      if (r[rank] == truths[i]) {
        total += 1.0 / static_cast<double>(rank + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(rankings.size());
}

double accuracy(std::span<const std::vector<std::size_t>> rankings, std::span<const std::size_t> truths) {
  if (rankings.size() != truths.size()) fail(ErrorKind::kShape, "accuracy: size mismatch");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (!rankings[i].empty() && rankings[i][0] == truths[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

MetricsReport evaluate_probabilities(std::span<const std::vector<double>> probabilities,
                                     std::span<const std::size_t> truths, std::size_t n_classes) {
  if (probabilities.size() != truths.size()) fail(ErrorKind::kShape, "evaluate: size mismatch");
  std::vector<std::vector<std::size_t>> rankings;
  rankings.reserve(probabilities.size());
  MetricsReport report;
  report.n_evaluated = probabilities.size();
  report.per_class_count.assign(n_classes, 0);
  report.per_class_accuracy.assign(n_classes, 0.0);
  report.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i].size() != n_classes) fail(ErrorKind::kShape, "evaluate: probability vector size mismatch");
    if (truths[i] >= n_classes) fail(ErrorKind::kInvalidInput, "evaluate: label out of range");
    rankings.push_back(rank_labels(probabilities[i]));
    const std::size_t pred = rankings.back()[0];
    report.confusion[truths[i]][pred] += 1;
    report.per_class_count[truths[i]] += 1;
    if (pred == truths[i]) report.per_class_accuracy[truths[i]] += 1.0;
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (report.per_class_count[c]) report.per_class_accuracy[c] /= static_cast<double>(report.per_class_count[c]);
  }
  report.accuracy = accuracy(rankings, truths);
  report.map_at_3 = map_at_k(rankings, truths, std::min<std::size_t>(3, n_classes));
  return report;
}

std::vector<audio::AudioClip> split_windows(const audio::AudioClip& clip, std::size_t window_samples) {
  if (clip.samples.empty()) fail(ErrorKind::kInvalidInput, "clip_probability: empty clip " + clip.source_id);
  if (window_samples == 0) fail(ErrorKind::kParameter, "clip_probability: window length must be > 0");
  std::vector<audio::AudioClip> windows;
  for (std::size_t start = 0; start < clip.samples.size(); start += window_samples) {
    const std::size_t end = std::min(clip.samples.size(), start + window_samples);
    audio::AudioClip w;
    w.sample_rate = clip.sample_rate;
    w.source_id = clip.source_id;
    w.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
    if (w.samples.size() < window_samples) {
      w = audio::pad_or_crop(w, window_samples, audio::CropMode::kEvalCenter);
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<std::vector<float>> batch_logits(models::Model<float>& model,
                                             std::span<const features::FeatureMap* const> maps) {
  if (maps.empty()) return {};
  const auto& first = *maps.front();
  const std::size_t plane = first.channels * first.frames * first.bins;
  ad::Tensor<float> x(ad::Shape{maps.size(), first.channels, first.frames, first.bins});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i]->data.size() != plane) fail(ErrorKind::kShape, "batch_logits: maps differ in shape");
    std::copy(maps[i]->data.begin(), maps[i]->data.end(), x.data() + i * plane);
  }
  const ad::NoGradGuard no_grad;
  const auto logits = model.forward(ad::Var<float>(std::move(x)), false).value();
  const std::size_t m = logits.dim(1);
  std::vector<std::vector<float>> out(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    out[i].assign(logits.data() + i * m, logits.data() + (i + 1) * m);
  }
  return out;
}

std::vector<std::vector<float>> window_logits(const ClipScorer& scorer, const audio::AudioClip& clip) {
  if (!scorer.model || !scorer.extractor) fail(ErrorKind::kParameter, "clip scorer is missing a model or extractor");
  const auto windows = split_windows(clip, scorer.window_samples);
  std::vector<features::FeatureMap> maps;
  maps.reserve(windows.size());
  for (const auto& w : windows) {
    maps.push_back((*scorer.extractor)(w));
    if (scorer.standardizer) scorer.standardizer->apply(maps.back());
  }
  std::vector<const features::FeatureMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return batch_logits(*scorer.model, ptrs);
}

std::vector<double> clip_probability(const ClipScorer& scorer, const audio::AudioClip& clip) {
  const auto logits = window_logits(scorer, clip);
  const std::size_t m = logits.front().size();
  std::vector<double> mean(m, 0.0);
  for (const auto& row : logits) {
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> p(m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < m; ++j) mean[j] += p[j] / sum;
  }
  for (auto& v : mean) v /= static_cast<double>(logits.size());
  return mean;
}

std::vector<float> clip_logits(const ClipScorer& scorer, const audio::AudioClip& clip) {
  const auto logits = window_logits(scorer, clip);
  if (logits.size() == 1) return logits.front();
  const std::size_t m = logits.front().size();
  std::vector<double> acc(m, 0.0);
  for (const auto& row : logits) {
    for (std::size_t j = 0; j < m; ++j) acc[j] += row[j];
  }
  std::vector<float> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(logits.size()));
  return out;
}

void write_report_text(std::ostream& out, const MetricsReport& report, const std::string& name) {
  char buf[64];
  out << "model: " << name << '\n';
  out << "n_evaluated: " << report.n_evaluated << '\n';
  std::snprintf(buf, sizeof buf, "%.6f", report.accuracy);
  out << "accuracy: " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.6f", report.map_at_3);
  out << "map_at_3: " << buf << '\n';
  for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.6f", report.per_class_accuracy[c]);
    out << "class_" << c << "_accuracy: " << buf << " (n=" << report.per_class_count[c] << ")\n";
  }
}

void write_report_csv(std::ostream& out, const MetricsReport& report, const std::string& name) {
  char buf[64];
  out << "model,metric,class,value\n";
  std::snprintf(buf, sizeof buf, "%.9g", report.accuracy);
  out << name << ",accuracy,," << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.9g", report.map_at_3);
  out << name << ",map_at_3,," << buf << '\n';
  out << name << ",n_evaluated,," << report.n_evaluated << '\n';
  for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.9g", report.per_class_accuracy[c]);
    out << name << ",class_accuracy," << c << ',' << buf << '\n';
  }
  for (std::size_t t = 0; t < report.confusion.size(); ++t) {
    for (std::size_t p = 0; p < report.confusion[t].size(); ++p) {
      out << name << ",confusion_" << t << ',' << p << ',' << report.confusion[t][p] << '\n';
    }
  }
}

void write_logits_csv(const std::filesystem::path& path, std::span<const LogitsRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  const std::size_t m = rows.empty() ? 0 : rows.front().logits.size();
  out << "clip_id,label";
  for (std::size_t j = 0; j < m; ++j) out << ",logit_" << j;
  out << '\n';
  char buf[32];
  for (const auto& row : rows) {
    if (row.clip_id.find_first_of(",\"\n") != std::string::npos) {
      fail(ErrorKind::kInvalidInput, "logits csv: clip id contains a separator: " + row.clip_id);
    }
    out << row.clip_id << ',' << row.label;
    for (float v : row.logits) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

std::vector<LogitsRow> read_logits_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("clip_id,label", 0) != 0) {
    fail(ErrorKind::kInvalidInput, "logits csv: missing header in " + path.string());
  }
  std::vector<LogitsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < 2) fail(ErrorKind::kInvalidInput, "logits csv: short row");
    LogitsRow row;
    row.clip_id = fields[0];
    row.label = std::stoul(fields[1]);
    for (std::size_t j = 2; j < fields.size(); ++j) {
      float v = 0;
      const auto* b = fields[j].data();
      const auto res = std::from_chars(b, b + fields[j].size(), v);
      if (res.ec != std::errc()) fail(ErrorKind::kInvalidInput, "logits csv: bad number '" + fields[j] + "'");
      row.logits.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mrkd::eval
