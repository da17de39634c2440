#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mrkd/data.hpp"
#include "mrkd/error.hpp"

namespace mrkd::data {
namespace {

// Splits one CSV line; double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  if (quoted) fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kVal: return "val";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "val") return Split::kVal;
  fail(ErrorKind::kManifest, "unknown split tag '" + std::string(name) + "' (expected train, test or val)");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(i);
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view csv, const std::filesystem::path& base_dir) {
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(trim(line), line_no);
      break;
    }
  }
  if (header.empty()) fail(ErrorKind::kManifest, "manifest is empty");
  for (auto& h : header) h = trim(h);
  const bool has_split = header.size() == 3 && header[2] == "split";
  if (header.size() < 2 || header[0] != "path" || header[1] != "label" || (header.size() == 3 && !has_split) ||
      header.size() > 3) {
    fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) +
                                   ": header must be 'path,label' or 'path,label,split'");
  }

  DatasetManifest manifest;
  std::set<std::string> seen_paths;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(trim(line), line_no);
    if (fields.size() != header.size()) {
      fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    if (fields[0].empty() || fields[1].empty()) {
      fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) + ": empty path or label");
    }
    if (!seen_paths.insert(fields[0]).second) {
      fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) + ": duplicate path " + fields[0]);
    }
    ManifestEntry e;
    e.raw_path = fields[0];
    const std::filesystem::path p(fields[0]);
    e.path = p.is_absolute() ? p : base_dir / p;
    e.label_name = fields[1];
    if (has_split) {
      try {
        e.split = parse_split(fields[2]);
      } catch (const Error& err) {
        fail(ErrorKind::kManifest, "manifest row " + std::to_string(line_no) + ": " + err.what());
      }
    }
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) fail(ErrorKind::kManifest, "manifest has a header but no rows");

  std::set<std::string> names;
  for (const auto& e : manifest.entries) names.insert(e.label_name);
  manifest.class_names.assign(names.begin(), names.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i) index[manifest.class_names[i]] = i;
  for (auto& e : manifest.entries) e.label = index[e.label_name];
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kManifest, "cannot read manifest " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write manifest " + path.string());
  out << "path,label,split\n";
  for (const auto& e : manifest.entries) {
    out << quote_if_needed(e.raw_path) << ',' << quote_if_needed(e.label_name) << ',' << to_string(e.split) << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

}  // namespace mrkd::data
