#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "snr/data/image.hpp"

namespace snr::data {

enum class Label { kNoAppendicitis = 0, kAppendicitis = 1 };
enum class Split { kTrain, kValidation, kTest };

std::string_view to_string(Label label);
Label label_from_string(std::string_view name);
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);
inline constexpr std::array<Split, 3> kSplits{Split::kTrain, Split::kValidation, Split::kTest};

class UnlabeledSubjectError : public DataError {
 public:
  explicit UnlabeledSubjectError(std::vector<int> ids);
  const std::vector<int>& subject_ids() const { return ids_; }

 private:
  std::vector<int> ids_;
};

class StratificationError : public DataError {
 public:
  using DataError::DataError;
};

class ManifestError : public DataError {
 public:
  using DataError::DataError;
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;

  double of(Split s) const;
  void validate() const;  // nonnegative, train > 0, sum 1
};

struct SampleRecord {
  int subject_id = 0;
  int view_index = 1;
  std::string path;
  Label label = Label::kNoAppendicitis;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::map<int, Split> assignment;
  std::map<int, Label> labels;
  std::vector<SampleRecord> records;  // sorted by (subject_id, view_index)
  std::vector<std::string> warnings;  // diagnostics from building; not persisted

  std::vector<SampleRecord> split_records(Split split) const;
};

// Reads a UTF-8 CSV whose header includes `subject_id` and `diagnosis`.
std::map<int, Label> read_labels_csv(const std::filesystem::path& path);

// Grouped, stratified subject assignment. Within each class the subject ids
// are sorted, shuffled by `seed`, and cut into test, validation, and train in
// that order; split sizes use largest-remainder rounding of ratio·count so
// each is within one subject of its exact share.
std::map<int, Split> assign_splits(const std::map<int, Label>& subjects, const SplitRatios& ratios,
                                   std::uint64_t seed);

// Scans image_dir for <subject>.<view>.bmp files and joins them with the
// labels. Files whose names do not parse are skipped with a warning.
DatasetManifest build_manifest(const std::filesystem::path& image_dir, const std::map<int, Label>& labels,
                               const SplitRatios& ratios, std::uint64_t seed);
DatasetManifest build_manifest(const std::filesystem::path& image_dir, const std::filesystem::path& labels_csv,
                               const SplitRatios& ratios, std::uint64_t seed);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace snr::data
