#include "snr/app/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "snr/app/gradcheck_suite.hpp"
#include "snr/app/run_config.hpp"
#include "snr/data/dataset.hpp"
#include "snr/data/image.hpp"
#include "snr/data/manifest.hpp"
#include "snr/data/synthetic.hpp"
#include "snr/data/transforms.hpp"
#include "snr/eval/metrics.hpp"
#include "snr/explain/gradcam.hpp"
#include "snr/model/network.hpp"
#include "snr/model/weights_io.hpp"
#include "snr/train/trainer.hpp"

namespace snr::app {

namespace fs = std::filesystem;

namespace {

// Input problems found by the commands themselves (missing files, empty splits).
class BadInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalFlags {
  std::string config;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output;
  bool deterministic = false;
  bool no_timestamps = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* output_opt = nullptr;
};

struct SynthFlags {
  int subjects = 0, min_views = 0, max_views = 0;
  std::size_t image_size = 0;
  double positive_fraction = 0.0;
  CLI::Option *subjects_opt = nullptr, *size_opt = nullptr, *positive_opt = nullptr;
  CLI::Option *min_views_opt = nullptr, *max_views_opt = nullptr;
};

struct DataFlags {
  std::string images, labels, manifest;
};

struct TrainFlags {
  int epochs = 0;
  CLI::Option* epochs_opt = nullptr;
  bool no_augment = false;
  bool overfit = false;
};

struct EvalFlags {
  std::string weights, split = "test", report;
  double threshold = 0.5;
  CLI::Option* threshold_opt = nullptr;
};

struct GradCamFlags {
  std::string weights, split, samples, layer;
  bool negative = false;
};

struct GradCheckFlags {
  int seeds = 20;
  double tolerance = 1e-3;
  std::string fault;
};

RunConfig resolve_config(const GlobalFlags& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (!g.output.empty()) cfg.output_dir = g.output;
  if (g.seed_opt->count() > 0) cfg.set_seed(g.seed);
  if (g.workers_opt->count() > 0) cfg.workers = g.workers;
  if (g.deterministic) cfg.deterministic = true;
  if (cfg.deterministic) cfg.workers = 1;
  if (g.no_timestamps) cfg.timestamps = false;
  return cfg;
}

void apply_data_flags(RunConfig& cfg, const DataFlags& d) {
  if (!d.images.empty()) cfg.dataset_root = d.images;
  if (!d.labels.empty()) cfg.labels_csv = d.labels;
  if (!d.manifest.empty()) cfg.manifest_path = d.manifest;
}

model::NetworkConfig network_config(const RunConfig& cfg) {
  model::NetworkConfig n = cfg.network;
  n.dropout_rate = cfg.train.dropout_rate;
  return n;
}

data::DatasetManifest read_manifest(const RunConfig& cfg) {
  const fs::path path = cfg.resolved_manifest_path();
  if (!fs::exists(path)) throw BadInput(fmt::format("manifest {} not found; run `snr split` first", path.string()));
  return data::load_manifest(path);
}

model::Network<float> load_network(const RunConfig& cfg, const fs::path& weights) {
  if (!fs::exists(weights)) throw BadInput(fmt::format("weights file {} not found", weights.string()));
  model::Network<float> net(network_config(cfg));
  model::load_weights(weights, net);
  return net;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw BadInput("cannot write " + path.string());
  f << text;
}

int cmd_synth(RunConfig cfg, const SynthFlags& s, std::ostream& out) {
  if (s.subjects_opt->count() > 0) cfg.synth.subjects = s.subjects;
  if (s.size_opt->count() > 0) cfg.synth.image_size = s.image_size;
  if (s.positive_opt->count() > 0) cfg.synth.positive_fraction = s.positive_fraction;
  if (s.min_views_opt->count() > 0) cfg.synth.min_views = s.min_views;
  if (s.max_views_opt->count() > 0) cfg.synth.max_views = s.max_views;
  cfg.synth.validate();
  const auto images = data::planted_patch_set(cfg.synth);
  const data::SynthSummary sum = data::write_synthetic_dataset(images, cfg.output_dir);
  fmt::print(out, "wrote {} images of {} subjects ({} positive images)\n", sum.images, sum.subjects, sum.positives);
  fmt::print(out, "images: {}\nlabels: {}\n", sum.image_dir.string(), sum.labels_csv.string());
  return kExitOk;
}

int cmd_split(RunConfig cfg, const DataFlags& d, std::ostream& out, std::ostream& err) {
  apply_data_flags(cfg, d);
  cfg.validate();
  if (cfg.dataset_root.empty()) throw BadInput("no image directory given (--images or dataset_root)");
  if (cfg.labels_csv.empty()) throw BadInput("no labels file given (--labels or labels_csv)");
  if (!fs::is_directory(cfg.dataset_root)) throw BadInput("image directory " + cfg.dataset_root.string() + " not found");
  if (!fs::exists(cfg.labels_csv)) throw BadInput("labels file " + cfg.labels_csv.string() + " not found");

  const data::DatasetManifest m = data::build_manifest(cfg.dataset_root, cfg.labels_csv, cfg.split, cfg.seed);
  for (const auto& w : m.warnings) fmt::print(err, "warning: {}\n", w);
  const fs::path path = cfg.resolved_manifest_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::save_manifest(m, path);

  fmt::print(out, "{:<12} {:>9} {:>7} {:>9} {:>9}\n", "split", "subjects", "images", "positive", "negative");
  for (data::Split s : data::kSplits) {
    const auto recs = m.split_records(s);
    std::size_t subjects = 0, pos = 0;
    for (const auto& [id, sp] : m.assignment) {
      if (sp == s) ++subjects;
    }
    for (const auto& r : recs) {
      if (r.label == data::Label::kAppendicitis) ++pos;
    }
    fmt::print(out, "{:<12} {:>9} {:>7} {:>9} {:>9}\n", data::to_string(s), subjects, recs.size(), pos,
               recs.size() - pos);
  }
  // Counted from the records, not the assignment.
  std::map<int, std::set<data::Split>> seen;
  for (const auto& r : m.records) seen[r.subject_id].insert(r.split);
  const auto overlap = std::count_if(seen.begin(), seen.end(), [](const auto& kv) { return kv.second.size() > 1; });
  fmt::print(out, "subjects in more than one split: {}\n", overlap);
  fmt::print(out, "manifest: {}\n", path.string());
  return overlap == 0 ? kExitOk : kExitCheckFailed;
}

std::string epoch_line(const train::EpochRecord& r) {
  return fmt::format("epoch {:>3}  train_loss {:.6f}  train_acc {:.4f}  val_loss {:.6f}  val_acc {:.4f}\n", r.epoch,
                     r.train_loss, r.train_acc, r.val_loss, r.val_acc);
}

int cmd_train(RunConfig cfg, const DataFlags& d, const TrainFlags& t, std::ostream& out) {
  apply_data_flags(cfg, d);
  if (t.epochs_opt->count() > 0) cfg.train.max_epochs = t.epochs;
  if (t.no_augment || t.overfit) cfg.augment_enabled = false;
  cfg.validate();
  const data::DatasetManifest m = read_manifest(cfg);

  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "run_config.json", run_config_to_string(cfg));

  model::Network<float> net(network_config(cfg));
  train::TrainOptions opts;
  if (cfg.augment_enabled) opts.augment = cfg.augment;
  opts.workers = cfg.workers;
  opts.out_dir = cfg.output_dir;
  opts.timestamps = cfg.timestamps;
  opts.on_epoch = [&out](const train::EpochRecord& r) {
    out << epoch_line(r);
    out.flush();
  };

  if (t.overfit) {
    const auto records = m.split_records(data::Split::kTrain);
    if (records.empty()) throw train::TrainError("training split is empty");
    const auto examples = data::load_examples(records, static_cast<std::size_t>(cfg.network.input_size));
    opts.target_train_accuracy = 1.0;
    const train::TrainState st = train::train_network(net, examples, {}, cfg.train, opts);
    const double acc = st.history.empty() ? 0.0 : st.history.back().train_acc;
    fmt::print(out, "overfit: train_acc {:.4f} after {} epochs\n", acc, st.epoch);
    if (acc < 1.0) throw CheckFailed(fmt::format("overfit check failed: train_acc {:.4f} < 1", acc));
    return kExitOk;
  }

  const train::TrainState st = train::run_training(net, m, cfg.train, opts);
  fmt::print(out, "best epoch {} val_loss {:.6f}{}\n", st.best_epoch, st.best_val_loss,
             st.early_stopped ? " (early stopped)" : "");
  fmt::print(out, "weights: {}\n", (cfg.output_dir / "best.w").string());
  return kExitOk;
}

int cmd_eval(RunConfig cfg, const DataFlags& d, const EvalFlags& e, std::ostream& out, std::ostream& err) {
  apply_data_flags(cfg, d);
  if (e.threshold_opt->count() > 0) cfg.threshold = e.threshold;
  cfg.validate();
  const data::DatasetManifest m = read_manifest(cfg);
  const data::Split split = data::split_from_string(e.split);
  const auto records = m.split_records(split);
  if (records.empty()) throw BadInput(fmt::format("split {} has no images", e.split));

  const fs::path weights = e.weights.empty() ? cfg.output_dir / "best.w" : fs::path(e.weights);
  model::Network<float> net = load_network(cfg, weights);
  const fs::path report_path =
      e.report.empty() ? cfg.output_dir / fmt::format("report_{}.json", e.split) : fs::path(e.report);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());

  eval::EvalSplitOptions opts;
  opts.threshold = cfg.threshold;
  opts.batch_size = cfg.eval_batch_size;
  const eval::MetricsReport r = eval::evaluate_split(net, records, report_path, opts);

  fmt::print(out, "split      {} ({} images)\n", e.split, r.n_samples);
  fmt::print(out, "Accuracy   {:.6f}\n", r.accuracy);
  fmt::print(out, "Precision  {:.6f}\n", r.precision);
  fmt::print(out, "Recall     {:.6f}\n", r.recall);
  fmt::print(out, "F1         {:.6f}\n", r.f1);
  if (r.auc) {
    fmt::print(out, "AUC        {:.6f}\n", *r.auc);
  } else {
    fmt::print(out, "AUC        undefined\n");
    fmt::print(err, "warning: AUC undefined because split {} contains a single class\n", e.split);
  }
  for (const auto& f : r.flags) {
    if (f != eval::kAucUndefined) fmt::print(err, "warning: {}\n", f);
  }
  fmt::print(out, "report: {}\n", report_path.string());
  return kExitOk;
}

std::vector<data::ImageId> parse_samples(const std::string& text) {
  std::vector<data::ImageId> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dot = item.find('.');
    try {
      if (dot == std::string::npos) throw std::invalid_argument(item);
      std::size_t a = 0, b = 0;
      const int s = std::stoi(item.substr(0, dot), &a);
      const int v = std::stoi(item.substr(dot + 1), &b);
      if (a != dot || b != item.size() - dot - 1) throw std::invalid_argument(item);
      ids.push_back({s, v});
    } catch (const std::logic_error&) {
      throw BadInput(fmt::format("bad sample '{}'; expected <subject>.<view>", item));
    }
  }
  return ids;
}

int cmd_gradcam(RunConfig cfg, const DataFlags& d, const GradCamFlags& g, std::ostream& out) {
  apply_data_flags(cfg, d);
  cfg.validate();
  const data::DatasetManifest m = read_manifest(cfg);

  std::vector<data::SampleRecord> chosen;
  if (!g.samples.empty()) {
    for (const data::ImageId& id : parse_samples(g.samples)) {
      const auto it = std::find_if(m.records.begin(), m.records.end(), [&](const data::SampleRecord& r) {
        return r.subject_id == id.subject_id && r.view_index == id.view_index;
      });
      if (it == m.records.end()) {
        throw BadInput(fmt::format("sample {}.{} is not in the manifest", id.subject_id, id.view_index));
      }
      chosen.push_back(*it);
    }
  } else {
    chosen = m.split_records(data::split_from_string(g.split.empty() ? "test" : g.split));
  }
  if (chosen.empty()) throw BadInput("no samples selected");

  const fs::path weights = g.weights.empty() ? cfg.output_dir / "best.w" : fs::path(g.weights);
  model::Network<float> net = load_network(cfg, weights);
  const auto size = static_cast<std::size_t>(cfg.network.input_size);
  const fs::path dir = cfg.output_dir / "gradcam";

  explain::GradCamOptions opts;
  opts.target_layer = g.layer;
  opts.negative_class = g.negative;
  for (const auto& r : chosen) {
    const data::ImageBuffer img = data::decode_bmp(fs::path(r.path));
    const explain::Heatmap h = explain::gradcam(net, data::preprocess(img, size), opts, {r.subject_id, r.view_index});
    const explain::OverlayPaths p = explain::render_overlay(h, data::resize_bilinear(img, size, size), dir);
    const std::size_t peak = h.argmax();
    fmt::print(out, "{}.{}  label {}  score {:.6f}  peak ({}, {})  {}  {}\n", r.subject_id, r.view_index,
               data::to_string(r.label), h.predicted_score, peak / h.width, peak % h.width, p.heatmap.string(),
               p.overlay.string());
  }
  fmt::print(out, "layer: {}\n", chosen.empty() ? std::string() : opts.target_layer.empty()
                                                                      ? net.last_conv_name()
                                                                      : opts.target_layer);
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, const GradCheckFlags& g, std::ostream& out) {
  GradCheckSuiteOptions opts;
  opts.seeds = g.seeds;
  opts.tolerance = g.tolerance;
  opts.base_seed = cfg.seed;
  if (!g.fault.empty()) opts.fault_op = g.fault;
  if (opts.seeds < 1) throw BadInput("--seeds must be at least 1");

  const auto rows = run_gradcheck_suite(opts);
  fmt::print(out, "{:<18} {:>14} {:>6}  {}\n", "case", "max_rel_err", "seeds", "status");
  std::vector<std::string> failed;
  for (const auto& r : rows) {
    fmt::print(out, "{:<18} {:>14.3e} {:>6}  {}\n", r.name, r.max_relative_error, r.seeds, r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.name);
  }
  if (!failed.empty()) {
    throw CheckFailed(fmt::format("gradient check failed for: {} (tolerance {:g})", fmt::join(failed, ", "),
                                  opts.tolerance));
  }
  fmt::print(out, "all {} cases within {:g}\n", rows.size(), opts.tolerance);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Appendicitis ultrasound classifier: data, training, evaluation and Grad-CAM"};
  app.name("snr");
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config, "run configuration JSON")->check(CLI::ExistingFile);
  g.seed_opt = app.add_option("--seed", g.seed, "seed for splitting, initialization, shuffling and augmentation");
  g.workers_opt = app.add_option("--workers", g.workers, "data loading workers")->check(CLI::PositiveNumber);
  g.output_opt = app.add_option("--output", g.output, "output directory");
  app.add_flag("--deterministic", g.deterministic, "single worker, reproducible to the byte");
  app.add_flag("--no-timestamps", g.no_timestamps, "omit wall-clock fields from logs");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset to --output");
  SynthFlags sf;
  sf.subjects_opt = synth->add_option("--subjects", sf.subjects);
  sf.size_opt = synth->add_option("--image-size", sf.image_size);
  sf.positive_opt = synth->add_option("--positive-fraction", sf.positive_fraction);
  sf.min_views_opt = synth->add_option("--min-views", sf.min_views);
  sf.max_views_opt = synth->add_option("--max-views", sf.max_views);

  DataFlags df;
  auto add_manifest = [&df](CLI::App* sub) {
    sub->add_option("--manifest", df.manifest, "manifest JSON (default <output>/manifest.json)");
  };

  auto* split = app.add_subcommand("split", "build the subject-grouped train/validation/test manifest");
  split->add_option("--images", df.images, "directory of <subject>.<view>.bmp images");
  split->add_option("--labels", df.labels, "CSV with subject_id and diagnosis columns");
  add_manifest(split);

  auto* train = app.add_subcommand("train", "train on the manifest's train split with validation early stopping");
  TrainFlags tf;
  add_manifest(train);
  tf.epochs_opt = train->add_option("--epochs", tf.epochs, "maximum epochs");
  train->add_flag("--no-augment", tf.no_augment, "train on unaugmented images");
  train->add_flag("--overfit", tf.overfit, "fit the train split without validation until 100% accuracy");

  auto* eval = app.add_subcommand("eval", "score a split and write the metrics report");
  EvalFlags ef;
  add_manifest(eval);
  eval->add_option("--weights", ef.weights, "weights file (default <output>/best.w)");
  eval->add_option("--split", ef.split, "train, validation or test")->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--report", ef.report, "report path (default <output>/report_<split>.json)");
  ef.threshold_opt = eval->add_option("--threshold", ef.threshold, "decision threshold")->check(CLI::Range(0.0, 1.0));

  auto* cam = app.add_subcommand("gradcam", "write Grad-CAM heatmaps and overlays to <output>/gradcam");
  GradCamFlags gf;
  add_manifest(cam);
  cam->add_option("--weights", gf.weights, "weights file (default <output>/best.w)");
  cam->add_option("--split", gf.split, "split to explain when --samples is absent (default test)")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  cam->add_option("--samples", gf.samples, "comma-separated <subject>.<view> list");
  cam->add_option("--layer", gf.layer, "activation to explain (default last conv of stage 4)");
  cam->add_flag("--negative", gf.negative, "explain the negative class");

  auto* check = app.add_subcommand("gradcheck", "finite-difference gradient checks for every op");
  GradCheckFlags cf;
  check->add_option("--seeds", cf.seeds, "seeds per case");
  check->add_option("--tolerance", cf.tolerance, "maximum relative error");
  check->add_option("--inject-fault", cf.fault)->group("");

  app.fallthrough();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    fmt::print(err, "error: {}\n", e.what());
    fmt::print(err, "run with --help for usage\n");
    return kExitBadInput;
  }

  try {
    RunConfig cfg = resolve_config(g);
    if (synth->parsed()) return cmd_synth(cfg, sf, out);
    if (split->parsed()) return cmd_split(cfg, df, out, err);
    if (train->parsed()) return cmd_train(cfg, df, tf, out);
    if (eval->parsed()) return cmd_eval(cfg, df, ef, out, err);
    if (cam->parsed()) return cmd_gradcam(cfg, df, gf, out);
    if (check->parsed()) return cmd_gradcheck(cfg, cf, out);
    return kExitBadInput;
  } catch (const train::DivergedTrainingError& e) {
    fmt::print(err, "error: {} (epoch {})\n", e.what(), e.epoch());
    return kExitDiverged;
  } catch (const CheckFailed& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitCheckFailed;
  } catch (const model::WeightsError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const data::DataError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const train::TrainError& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const BadInput& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const std::invalid_argument& e) {
    // RunConfigError, ConfigError, MetricsError, GradCamError.
    fmt::print(err, "error: {}\n", e.what());
    return kExitBadInput;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitCheckFailed;
  }
}

}  // namespace snr::app
