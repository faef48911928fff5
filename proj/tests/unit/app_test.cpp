#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "snr/app/cli.hpp"
#include "snr/app/gradcheck_suite.hpp"
#include "snr/app/run_config.hpp"
#include "snr/data/manifest.hpp"

namespace snr::app {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "snr_app_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Small enough to train in about a second.
std::string tiny_config_json(double validation = 0.2, int widths_last = 16) {
  return R"({
  "seed": 3,
  "split": {"train": 0.6, "validation": )" +
         std::to_string(validation) + R"(, "test": )" + std::to_string(0.4 - validation) + R"(},
  "network": {"input_size": 32, "stage_widths": [4, 8, 8, )" +
         std::to_string(widths_last) + R"(], "stage_depths": [1, 1, 1, 1],
              "dense_units": 4, "frozen_stages": []},
  "train": {"learning_rate": 0.003, "batch_size": 8, "max_epochs": 4, "patience": 2},
  "synth": {"subjects": 20, "image_size": 32}
})";
}

// A synthetic dataset plus a config file, shared by the workflow tests.
struct Workspace {
  fs::path root, data, config;

  explicit Workspace(const std::string& name, const std::string& config_text = tiny_config_json()) {
    root = fresh_dir(name);
    data = root / "data";
    config = root / "config.json";
    write(config, config_text);
    const CliResult r = run({"synth", "--config", config.string(), "--output", data.string()});
    EXPECT_EQ(r.code, kExitOk) << r.err;
  }

  std::vector<std::string> with(std::vector<std::string> args, const fs::path& out) const {
    args.insert(args.end(), {"--config", config.string(), "--output", out.string()});
    return args;
  }
  CliResult split(const fs::path& out) const {
    return run(with({"split", "--images", (data / "US_Pictures").string(), "--labels", (data / "labels.csv").string()},
                    out));
  }
};

TEST(RunConfig, RoundTripsThroughJson) {
  RunConfig c;
  c.set_seed(42);
  c.output_dir = "some/dir";
  c.network = model::tiny_config(64, {8, 16, 32, 64}, 8);
  c.train.learning_rate = 3e-4;
  c.augment_enabled = false;
  c.split = {0.5, 0.25, 0.25};
  c.threshold = 0.4;
  const std::string text = run_config_to_string(c);
  const RunConfig back = run_config_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(run_config_to_string(back), text);
  EXPECT_EQ(back.network.stage_widths, c.network.stage_widths);
  EXPECT_EQ(back.train.seed, 42u);
  EXPECT_FALSE(back.augment_enabled);
}

TEST(RunConfig, MissingKeysKeepDefaults) {
  const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"threshold": 0.3})"));
  EXPECT_EQ(c.threshold, 0.3);
  EXPECT_EQ(run_config_to_string(c).size(), [] {
    RunConfig d;
    d.threshold = 0.3;
    return run_config_to_string(d).size();
  }());
}

TEST(RunConfig, UnknownKeysAreRejected) {
  using nlohmann::json;
  EXPECT_THROW(run_config_from_json(json::parse(R"({"thresold": 0.3})")), RunConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"lr": 0.1}})")), RunConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"network": {"widths": [1, 2, 3, 4]}})")), RunConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"split": {"train": 1, "val": 0}})")), RunConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"batch_size": "eight"}})")), RunConfigError);
  EXPECT_THROW(run_config_from_json(json::parse("[1, 2]")), RunConfigError);
}

TEST(RunConfig, TopLevelSeedReachesEveryComponentUnlessOverridden) {
  const RunConfig c = run_config_from_json(nlohmann::json::parse(R"({"seed": 11, "augment": {"seed": 5}})"));
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.network.seed, 11u);
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.synth.seed, 11u);
  EXPECT_EQ(c.augment.seed, 5u);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, kExitOk);
  EXPECT_NE(run({"--help"}).out.find("gradcheck"), std::string::npos);
  EXPECT_EQ(run({}).code, kExitBadInput);
  EXPECT_EQ(run({"frobnicate"}).code, kExitBadInput);
  EXPECT_EQ(run({"eval", "--split", "holdout"}).code, kExitBadInput);
  EXPECT_EQ(run({"eval", "--threshold", "1.5"}).code, kExitBadInput);
  EXPECT_EQ(run({"split", "--config", "/nonexistent/config.json"}).code, kExitBadInput);
}

TEST(Cli, BadConfigFileIsBadInput) {
  const auto dir = fresh_dir("bad_config");
  write(dir / "c.json", R"({"train": {"learning_rate": 0.1, "momentum": 0.9}})");
  const CliResult r = run({"split", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, kExitBadInput);
  EXPECT_NE(r.err.find("momentum"), std::string::npos);
  write(dir / "d.json", R"({"train": {"batch_size": 0}})");
  EXPECT_EQ(run({"split", "--config", (dir / "d.json").string()}).code, kExitBadInput);
}

TEST(Cli, SplitReportsCountsAndNoOverlap) {
  const Workspace ws("split_ok");
  const auto out = ws.root / "run";
  const CliResult r = ws.split(out);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("subjects in more than one split: 0"), std::string::npos);
  const auto m = data::load_manifest(out / "manifest.json");
  EXPECT_EQ(m.seed, 3u);
  EXPECT_EQ(m.assignment.size(), 20u);
}

TEST(Cli, SplitWithUnlabeledSubjectNamesIt) {
  const Workspace ws("split_unlabeled");
  // drop subject 4 from the labels
  std::istringstream in(slurp(ws.data / "labels.csv"));
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.rfind("4,", 0) != 0) kept += line + "\n";
  }
  write(ws.data / "labels.csv", kept);
  const CliResult r = ws.split(ws.root / "run");
  EXPECT_EQ(r.code, kExitBadInput);
  EXPECT_NE(r.err.find("without a label: 4"), std::string::npos) << r.err;
}

TEST(Cli, SplitWithMissingInputsIsBadInput) {
  const Workspace ws("split_missing");
  EXPECT_EQ(run(ws.with({"split"}, ws.root / "run")).code, kExitBadInput);
  EXPECT_EQ(run(ws.with({"split", "--images", "/nonexistent", "--labels", (ws.data / "labels.csv").string()},
                        ws.root / "run"))
                .code,
            kExitBadInput);
}

TEST(Cli, TrainWithoutValidationSplitIsBadInput) {
  const Workspace ws("train_no_val", tiny_config_json(0.0));
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  const CliResult r = run(ws.with({"train"}, out));
  EXPECT_EQ(r.code, kExitBadInput);
  EXPECT_NE(r.err.find("validation"), std::string::npos) << r.err;
}

TEST(Cli, TrainWithoutManifestIsBadInput) {
  const Workspace ws("train_no_manifest");
  const CliResult r = run(ws.with({"train"}, ws.root / "run"));
  EXPECT_EQ(r.code, kExitBadInput);
  EXPECT_NE(r.err.find("manifest"), std::string::npos);
}

TEST(Cli, DivergedTrainingExitsThree) {
  const Workspace ws("diverged");
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  auto j = nlohmann::json::parse(slurp(ws.config));
  j["train"]["learning_rate"] = 1e30;
  write(ws.config, j.dump());
  const CliResult r = run(ws.with({"train", "--no-augment"}, out));
  EXPECT_EQ(r.code, kExitDiverged) << r.out << r.err;
  EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

TEST(Cli, TrainEvalGradcamWorkflow) {
  const Workspace ws("workflow");
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  const CliResult t = run(ws.with({"train", "--seed", "9", "--epochs", "2"}, out));
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(out / "best.w"));
  EXPECT_TRUE(fs::exists(out / "train_log.jsonl"));
  // flags override the config file
  const RunConfig used = load_run_config(out / "run_config.json");
  EXPECT_EQ(used.seed, 9u);
  EXPECT_EQ(used.train.seed, 9u);
  EXPECT_EQ(used.train.max_epochs, 2);
  EXPECT_EQ(used.network.stage_widths[3], 16);

  const CliResult e = run(ws.with({"eval", "--split", "validation"}, out));
  ASSERT_EQ(e.code, kExitOk) << e.err;
  for (const char* key : {"Accuracy", "Precision", "Recall", "F1", "AUC"}) {
    EXPECT_NE(e.out.find(key), std::string::npos) << key;
  }
  EXPECT_TRUE(fs::exists(out / "report_validation.json"));
  EXPECT_TRUE(fs::exists(out / "report_validation.scores.csv"));

  const auto m = data::load_manifest(out / "manifest.json");
  const auto& rec = m.records.front();
  const std::string sample = std::to_string(rec.subject_id) + "." + std::to_string(rec.view_index);
  const CliResult g = run(ws.with({"gradcam", "--samples", sample}, out));
  ASSERT_EQ(g.code, kExitOk) << g.err;
  EXPECT_TRUE(fs::exists(out / "gradcam" / (sample + ".cam.pgm")));
  EXPECT_TRUE(fs::exists(out / "gradcam" / (sample + ".overlay.ppm")));

  const CliResult missing = run(ws.with({"gradcam", "--samples", "999.1"}, out));
  EXPECT_EQ(missing.code, kExitBadInput);
  EXPECT_NE(missing.err.find("999.1"), std::string::npos);
  EXPECT_EQ(run(ws.with({"gradcam", "--samples", "abc"}, out)).code, kExitBadInput);
  EXPECT_EQ(run(ws.with({"gradcam", "--samples", sample, "--layer", "stage9"}, out)).code, kExitBadInput);
}

TEST(Cli, EvalWithMismatchedWeightsNamesTheTensor) {
  const Workspace ws("mismatch");
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  ASSERT_EQ(run(ws.with({"train", "--epochs", "1"}, out)).code, kExitOk);
  write(ws.config, tiny_config_json(0.2, 32));
  const CliResult r = run(ws.with({"eval"}, out));
  EXPECT_EQ(r.code, kExitBadInput);
  EXPECT_NE(r.err.find("stage4"), std::string::npos) << r.err;
  EXPECT_EQ(run(ws.with({"eval", "--weights", (out / "none.w").string()}, out)).code, kExitBadInput);
}

TEST(Cli, SingleClassSplitHasUndefinedAuc) {
  const Workspace ws("single_class");
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  ASSERT_EQ(run(ws.with({"train", "--epochs", "1"}, out)).code, kExitOk);
  auto m = data::load_manifest(out / "manifest.json");
  std::erase_if(m.records, [](const data::SampleRecord& r) {
    return r.split == data::Split::kTest && r.label == data::Label::kAppendicitis;
  });
  data::save_manifest(m, out / "negatives.json");
  const CliResult r = run(ws.with({"eval", "--manifest", (out / "negatives.json").string()}, out));
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("AUC        undefined"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("single class"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(out / "report_test.json"));
  EXPECT_TRUE(report["auc"].is_null());
}

TEST(Cli, OverfitReachesFullTrainAccuracy) {
  const Workspace ws("overfit");
  const auto out = ws.root / "run";
  ASSERT_EQ(ws.split(out).code, kExitOk);
  const CliResult r = run(ws.with({"train", "--overfit", "--epochs", "60", "--no-timestamps"}, out));
  ASSERT_EQ(r.code, kExitOk) << r.out << r.err;
  std::istringstream log(slurp(out / "train_log.jsonl"));
  std::string line, last;
  while (std::getline(log, line)) {
    if (!line.empty()) last = line;
  }
  EXPECT_EQ(nlohmann::json::parse(last)["train_acc"].get<double>(), 1.0);
}

TEST(Cli, DeterministicRunsAreByteIdentical) {
  const Workspace ws("determinism");
  const auto a = ws.root / "a", b = ws.root / "b";
  for (const auto& out : {a, b}) {
    ASSERT_EQ(ws.split(out).code, kExitOk);
    ASSERT_EQ(run(ws.with({"train", "--deterministic", "--no-timestamps"}, out)).code, kExitOk);
    ASSERT_EQ(run(ws.with({"eval", "--deterministic"}, out)).code, kExitOk);
  }
  for (const char* f : {"manifest.json", "train_log.jsonl", "best.w", "report_test.json", "report_test.scores.csv"}) {
    const std::string x = slurp(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(b / f)) << f;
  }
}

TEST(GradCheckSuite, PassesAndCatchesEveryInjectedFault) {
  GradCheckSuiteOptions opts;
  opts.seeds = 2;
  for (const auto& row : run_gradcheck_suite(opts)) {
    EXPECT_TRUE(row.passed) << row.name << " " << row.max_relative_error;
    EXPECT_EQ(row.seeds, 2);
  }
  for (const std::string& name : gradcheck_case_names()) {
    if (name == "network") continue;
    opts.fault_op = name == "batch_norm_eval" ? "batch_norm" : name;
    const auto rows = run_gradcheck_suite(opts, {name});
    EXPECT_FALSE(rows[0].passed) << name;
  }
}

TEST(GradCheckSuite, UnknownCaseIsRejected) {
  EXPECT_THROW(run_gradcheck_suite({}, {"softmax"}), std::invalid_argument);
}

TEST(Cli, GradcheckFaultExitsOneNamingTheOp) {
  const CliResult ok = run({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  const CliResult bad = run({"gradcheck", "--seeds", "1", "--inject-fault", "conv2d"});
  EXPECT_EQ(bad.code, kExitCheckFailed);
  EXPECT_NE(bad.err.find("conv2d"), std::string::npos);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace snr::app
