#include "snr/data/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

namespace snr::data {

std::string_view to_string(Label label) {
  return label == Label::kAppendicitis ? "appendicitis" : "no_appendicitis";
}

Label label_from_string(std::string_view name) {
  if (name == "appendicitis") return Label::kAppendicitis;
  if (name == "no_appendicitis") return Label::kNoAppendicitis;
  throw DataError(fmt::format("unknown diagnosis '{}' (expected appendicitis or no_appendicitis)", name));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  for (Split s : kSplits)
    if (to_string(s) == name) return s;
  throw DataError(fmt::format("unknown split '{}'", name));
}

UnlabeledSubjectError::UnlabeledSubjectError(std::vector<int> ids)
    : DataError(fmt::format("images found for subjects without a label: {}", fmt::join(ids, ", "))),
      ids_(std::move(ids)) {}

double SplitRatios::of(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValidation: return validation;
    case Split::kTest: return test;
  }
  return 0.0;
}

void SplitRatios::validate() const {
  if (!(train > 0.0) || !(validation >= 0.0) || !(test >= 0.0)) {
    throw DataError(fmt::format("split ratios must be nonnegative with a positive train share, got ({}, {}, {})",
                                train, validation, test));
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw DataError(fmt::format("split ratios must sum to 1, got {}", train + validation + test));
  }
}

std::vector<SampleRecord> DatasetManifest::split_records(Split split) const {
  std::vector<SampleRecord> out;
  for (const SampleRecord& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

// Test, validation, train sizes for one class.
std::array<std::size_t, 3> allot(std::size_t n, const SplitRatios& ratios) {
  const std::array<Split, 3> order{Split::kTest, Split::kValidation, Split::kTrain};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = ratios.of(order[i]) * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(quota));
    frac[i] = quota - std::floor(quota);
    used += sizes[i];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < n; k = (k + 1) % 3) {
    if (ratios.of(order[rank[k]]) <= 0.0) continue;
    ++sizes[rank[k]];
    ++used;
  }
  return sizes;
}

}  // namespace

std::map<int, Label> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("labels CSV " + path.string() + " is empty");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(fmt::format("labels CSV {} has no '{}' column", path.string(), name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = col("subject_id"), dx_col = col("diagnosis");

  std::map<int, Label> labels;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() <= std::max(id_col, dx_col)) {
      throw DataError(fmt::format("{}:{}: expected at least {} fields", path.string(), line_no,
                                  std::max(id_col, dx_col) + 1));
    }
    int id = 0;
    std::size_t consumed = 0;
    try {
      id = std::stoi(f[id_col], &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != f[id_col].size() || f[id_col].empty() || id < 0) {
      throw DataError(fmt::format("{}:{}: invalid subject_id '{}'", path.string(), line_no, f[id_col]));
    }
    Label label;
    try {
      label = label_from_string(f[dx_col]);
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    const auto [it, inserted] = labels.emplace(id, label);
    if (!inserted && it->second != label) {
      throw DataError(fmt::format("{}:{}: subject {} has conflicting diagnoses", path.string(), line_no, id));
    }
  }
  return labels;
}

std::map<int, Split> assign_splits(const std::map<int, Label>& subjects, const SplitRatios& ratios,
                                   std::uint64_t seed) {
  ratios.validate();
  std::map<int, Split> out;
  for (Label cls : {Label::kNoAppendicitis, Label::kAppendicitis}) {
    std::vector<int> ids;
    for (const auto& [id, label] : subjects)
      if (label == cls) ids.push_back(id);
    if (ids.empty()) {
      throw StratificationError(fmt::format("no subjects with diagnosis '{}'; cannot stratify", to_string(cls)));
    }
    // one engine per class so adding subjects of one class leaves the other's order alone
    std::mt19937_64 rng(seed ^ (cls == Label::kAppendicitis ? 0x9E3779B97F4A7C15ULL : 0));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto sizes = allot(ids.size(), ratios);
    const std::size_t n_test = sizes[0], n_val = sizes[1];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out[ids[i]] = i < n_test ? Split::kTest : i < n_test + n_val ? Split::kValidation : Split::kTrain;
    }
  }
  return out;
}

DatasetManifest build_manifest(const std::filesystem::path& image_dir, const std::map<int, Label>& labels,
                               const SplitRatios& ratios, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(image_dir)) throw DataError("image directory not found: " + image_dir.string());

  DatasetManifest m;
  m.seed = seed;
  m.ratios = ratios;
  std::vector<std::pair<ImageId, std::string>> images;
  std::vector<std::string> names;
  for (const fs::directory_entry& e : fs::directory_iterator(image_dir)) {
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  for (const std::string& name : names) {
    try {
      images.emplace_back(parse_filename(name), name);
    } catch (const MalformedNameError& e) {
      m.warnings.push_back(fmt::format("skipping {}", e.what()));
    }
  }
  std::sort(images.begin(), images.end());

  std::set<int> unlabeled;
  std::map<int, Label> present;
  for (const auto& [id, name] : images) {
    const auto it = labels.find(id.subject_id);
    if (it == labels.end())
      unlabeled.insert(id.subject_id);
    else
      present[id.subject_id] = it->second;
  }
  if (!unlabeled.empty()) throw UnlabeledSubjectError({unlabeled.begin(), unlabeled.end()});
  if (images.empty()) throw DataError("no <subject>.<view>.bmp images in " + image_dir.string());

  m.assignment = assign_splits(present, ratios, seed);
  m.labels = present;
  std::map<int, int> views;
  for (const auto& [id, name] : images) {
    SampleRecord r;
    r.subject_id = id.subject_id;
    r.view_index = id.view_index;
    r.path = (image_dir / name).generic_string();
    r.label = present.at(id.subject_id);
    r.split = m.assignment.at(id.subject_id);
    m.records.push_back(std::move(r));
    ++views[id.subject_id];
  }
  for (const auto& [subject, count] : views) {
    if (count > 15) m.warnings.push_back(fmt::format("subject {} has {} views (more than 15)", subject, count));
  }
  return m;
}

DatasetManifest build_manifest(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv,
                               const SplitRatios& ratios, std::uint64_t seed) {
  return build_manifest(image_dir, read_labels_csv(labels_csv), ratios, seed);
}

std::string manifest_to_json(const DatasetManifest& m) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["seed"] = m.seed;
  j["ratios"] = {{"train", m.ratios.train}, {"validation", m.ratios.validation}, {"test", m.ratios.test}};
  ordered_json subjects = ordered_json::array();
  for (const auto& [id, split] : m.assignment) {
    subjects.push_back({{"subject_id", id}, {"split", to_string(split)}, {"label", to_string(m.labels.at(id))}});
  }
  j["subjects"] = std::move(subjects);
  ordered_json records = ordered_json::array();
  for (const SampleRecord& r : m.records) {
    records.push_back({{"subject_id", r.subject_id},
                       {"view_index", r.view_index},
                       {"path", r.path},
                       {"split", to_string(r.split)},
                       {"label", to_string(r.label)}});
  }
  j["records"] = std::move(records);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& r = j.at("ratios");
    m.ratios = {r.at("train").get<double>(), r.at("validation").get<double>(), r.at("test").get<double>()};
    for (const auto& s : j.at("subjects")) {
      const int id = s.at("subject_id").get<int>();
      m.assignment[id] = split_from_string(s.at("split").get<std::string>());
      m.labels[id] = label_from_string(s.at("label").get<std::string>());
    }
    for (const auto& rec : j.at("records")) {
      SampleRecord sr;
      sr.subject_id = rec.at("subject_id").get<int>();
      sr.view_index = rec.at("view_index").get<int>();
      sr.path = rec.at("path").get<std::string>();
      sr.split = split_from_string(rec.at("split").get<std::string>());
      sr.label = label_from_string(rec.at("label").get<std::string>());
      m.records.push_back(std::move(sr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  } catch (const DataError& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  for (const SampleRecord& r : m.records) {
    const auto it = m.assignment.find(r.subject_id);
    if (it == m.assignment.end()) {
      throw ManifestError(fmt::format("manifest record for subject {} has no subject entry", r.subject_id));
    }
    if (it->second != r.split || m.labels.at(r.subject_id) != r.label) {
      throw ManifestError(fmt::format("manifest record {}.{} disagrees with its subject entry", r.subject_id,
                                      r.view_index));
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const std::string text = manifest_to_json(manifest);
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return manifest_from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const ManifestError& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
}

}  // namespace snr::data
