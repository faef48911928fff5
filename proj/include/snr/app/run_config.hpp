#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "snr/data/manifest.hpp"
#include "snr/data/synthetic.hpp"
#include "snr/data/transforms.hpp"
#include "snr/model/network.hpp"
#include "snr/train/config.hpp"

namespace snr::app {

class RunConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything a run needs; serialized as one JSON document. Keys missing from
// a file keep their defaults, unknown keys are rejected.
struct RunConfig {
  std::filesystem::path dataset_root;  // directory of <subject>.<view>.bmp images
  std::filesystem::path labels_csv;
  std::filesystem::path manifest_path;  // defaults to <output_dir>/manifest.json
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;
  int workers = 1;
  bool deterministic = false;
  bool timestamps = true;
  data::SplitRatios split;
  model::NetworkConfig network;
  train::TrainConfig train;
  bool augment_enabled = true;
  data::AugmentConfig augment;
  data::SynthConfig synth;
  int eval_batch_size = 32;
  double threshold = 0.5;

  // Sets the run seed and every component seed derived from it.
  void set_seed(std::uint64_t s);
  std::filesystem::path resolved_manifest_path() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

std::string run_config_to_string(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace snr::app
