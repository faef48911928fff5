#include "snr/app/run_config.hpp"

#include <fstream>
#include <iterator>
#include <set>

namespace snr::app {

using nlohmann::json;
using nlohmann::ordered_json;

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  network.seed = s;
  train.seed = s;
  augment.seed = s;
  synth.seed = s;
}

std::filesystem::path RunConfig::resolved_manifest_path() const {
  return manifest_path.empty() ? output_dir / "manifest.json" : manifest_path;
}

void RunConfig::validate() const {
  if (workers < 1) throw RunConfigError("workers must be at least 1");
  if (eval_batch_size < 1) throw RunConfigError("eval_batch_size must be at least 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw RunConfigError("threshold must lie in [0, 1]");
  split.validate();
  network.validate();
  train.validate();
  augment.validate();
  synth.validate();
}

namespace {

// Reads known keys from `j` into the target, rejecting anything else.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw RunConfigError(where_ + " must be a JSON object");
  }
  // Call after every get(); rejects keys nobody asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw RunConfigError("unknown key '" + key + "' in " + where_);
    }
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw RunConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  void path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ordered_json network_json(const model::NetworkConfig& n) {
  ordered_json j;
  j["input_channels"] = n.input_channels;
  j["input_size"] = n.input_size;
  j["block_kind"] = std::string(model::to_string(n.block_kind));
  j["stage_depths"] = n.stage_depths;
  j["stage_widths"] = n.stage_widths;
  j["dense_units"] = n.dense_units;
  j["dropout_rate"] = n.dropout_rate;
  ordered_json frozen = ordered_json::array();
  for (model::Stage s : n.frozen_stages) frozen.push_back(std::string(model::to_string(s)));
  j["frozen_stages"] = frozen;
  j["seed"] = n.seed;
  j["bn_momentum"] = n.bn_momentum;
  j["bn_epsilon"] = n.bn_epsilon;
  return j;
}

void read_network(const json& j, model::NetworkConfig& n) {
  Reader r(j, "network");
  r.get("input_channels", n.input_channels);
  r.get("input_size", n.input_size);
  std::string kind(model::to_string(n.block_kind));
  r.get("block_kind", kind);
  n.block_kind = model::block_kind_from_string(kind);
  r.get("stage_depths", n.stage_depths);
  r.get("stage_widths", n.stage_widths);
  r.get("dense_units", n.dense_units);
  r.get("dropout_rate", n.dropout_rate);
  if (const json* f = r.child("frozen_stages")) {
    if (!f->is_array()) throw RunConfigError("network.frozen_stages must be an array of stage names");
    n.frozen_stages.clear();
    for (const auto& s : *f) n.frozen_stages.insert(model::stage_from_string(s.get<std::string>()));
  }
  r.get("seed", n.seed);
  r.get("bn_momentum", n.bn_momentum);
  r.get("bn_epsilon", n.bn_epsilon);
  r.finish();
}

ordered_json train_json(const train::TrainConfig& t) {
  ordered_json j;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["max_epochs"] = t.max_epochs;
  j["patience"] = t.patience;
  j["min_delta"] = t.min_delta;
  j["dropout_rate"] = t.dropout_rate;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_epsilon"] = t.adam_epsilon;
  j["seed"] = t.seed;
  return j;
}

void read_train(const json& j, train::TrainConfig& t) {
  Reader r(j, "train");
  r.get("learning_rate", t.learning_rate);
  r.get("batch_size", t.batch_size);
  r.get("max_epochs", t.max_epochs);
  r.get("patience", t.patience);
  r.get("min_delta", t.min_delta);
  r.get("dropout_rate", t.dropout_rate);
  r.get("adam_beta1", t.adam_beta1);
  r.get("adam_beta2", t.adam_beta2);
  r.get("adam_epsilon", t.adam_epsilon);
  r.get("seed", t.seed);
  r.finish();
}

ordered_json augment_json(bool enabled, const data::AugmentConfig& a) {
  ordered_json j;
  j["enabled"] = enabled;
  j["rotation_degrees"] = a.rotation_degrees;
  j["flip_probability"] = a.flip_probability;
  j["contrast_lo"] = a.contrast_lo;
  j["contrast_hi"] = a.contrast_hi;
  j["noise_sigma_max"] = a.noise_sigma_max;
  j["seed"] = a.seed;
  return j;
}

void read_augment(const json& j, bool& enabled, data::AugmentConfig& a) {
  Reader r(j, "augment");
  r.get("enabled", enabled);
  r.get("rotation_degrees", a.rotation_degrees);
  r.get("flip_probability", a.flip_probability);
  r.get("contrast_lo", a.contrast_lo);
  r.get("contrast_hi", a.contrast_hi);
  r.get("noise_sigma_max", a.noise_sigma_max);
  r.get("seed", a.seed);
  r.finish();
}

ordered_json synth_json(const data::SynthConfig& s) {
  ordered_json j;
  j["subjects"] = s.subjects;
  j["positive_fraction"] = s.positive_fraction;
  j["min_views"] = s.min_views;
  j["max_views"] = s.max_views;
  j["image_size"] = s.image_size;
  j["patch_fraction"] = s.patch_fraction;
  j["seed"] = s.seed;
  return j;
}

void read_synth(const json& j, data::SynthConfig& s) {
  Reader r(j, "synth");
  r.get("subjects", s.subjects);
  r.get("positive_fraction", s.positive_fraction);
  r.get("min_views", s.min_views);
  r.get("max_views", s.max_views);
  r.get("image_size", s.image_size);
  r.get("patch_fraction", s.patch_fraction);
  r.get("seed", s.seed);
  r.finish();
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["dataset_root"] = c.dataset_root.generic_string();
  j["labels_csv"] = c.labels_csv.generic_string();
  j["manifest_path"] = c.manifest_path.generic_string();
  j["output_dir"] = c.output_dir.generic_string();
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["deterministic"] = c.deterministic;
  j["timestamps"] = c.timestamps;
  j["split"] = {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}};
  j["network"] = network_json(c.network);
  j["train"] = train_json(c.train);
  j["augment"] = augment_json(c.augment_enabled, c.augment);
  j["synth"] = synth_json(c.synth);
  j["eval_batch_size"] = c.eval_batch_size;
  j["threshold"] = c.threshold;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  r.path("dataset_root", c.dataset_root);
  r.path("labels_csv", c.labels_csv);
  r.path("manifest_path", c.manifest_path);
  r.path("output_dir", c.output_dir);
  if (j.contains("seed")) {
    r.get("seed", c.seed);
    c.set_seed(c.seed);  // component sections may still override their own seeds
  }
  r.get("workers", c.workers);
  r.get("deterministic", c.deterministic);
  r.get("timestamps", c.timestamps);
  if (const json* s = r.child("split")) {
    Reader sr(*s, "split");
    sr.get("train", c.split.train);
    sr.get("validation", c.split.validation);
    sr.get("test", c.split.test);
    sr.finish();
  }
  if (const json* n = r.child("network")) read_network(*n, c.network);
  if (const json* t = r.child("train")) read_train(*t, c.train);
  if (const json* a = r.child("augment")) read_augment(*a, c.augment_enabled, c.augment);
  if (const json* s = r.child("synth")) read_synth(*s, c.synth);
  r.get("eval_batch_size", c.eval_batch_size);
  r.get("threshold", c.threshold);
  r.finish();
  return c;
}

std::string run_config_to_string(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunConfigError("cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw RunConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace snr::app
