#include "snr/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "snr/model/weights_io.hpp"
#include "snr/train/adam.hpp"
#include "snr/train/early_stopping.hpp"
#include "snr/train/loss.hpp"

namespace snr::train {

namespace {

using data::Example;
using data::Label;

float target_of(const Example& e) { return e.label == Label::kAppendicitis ? 1.0f : 0.0f; }

std::seed_seq keyed_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  return std::seed_seq(words.begin(), words.end());
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each i writes only
// its own slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace

double accuracy(const std::vector<float>& probabilities, const std::vector<Example>& examples) {
  if (probabilities.size() != examples.size() || examples.empty()) throw TrainError("accuracy: size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const bool predicted = probabilities[i] >= 0.5f;
    correct += predicted == (examples[i].label == Label::kAppendicitis);
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

EvalResult evaluate(model::Network<float>& net, const std::vector<Example>& examples, int batch_size) {
  EvalResult r;
  if (examples.empty()) throw TrainError("cannot evaluate an empty sample set");
  const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += bs) {
    const std::size_t end = std::min(start + bs, examples.size());
    std::vector<const TensorF*> inputs;
    std::vector<float> targets;
    for (std::size_t i = start; i < end; ++i) {
      inputs.push_back(&examples[i].input);
      targets.push_back(target_of(examples[i]));
    }
    const auto out = net.forward(data::stack_inputs(inputs), model::Mode::kEval);
    loss_sum += static_cast<double>(bce_loss(out.probabilities, targets).item()) * static_cast<double>(end - start);
    r.probabilities.insert(r.probabilities.end(), out.probabilities.data().begin(), out.probabilities.data().end());
    r.logits.insert(r.logits.end(), out.logits.data().begin(), out.logits.data().end());
  }
  r.loss = loss_sum / static_cast<double>(examples.size());
  r.accuracy = accuracy(r.probabilities, examples);
  return r;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["train_acc"] = r.train_acc;
  j["val_loss"] = r.val_loss;
  j["val_acc"] = r.val_acc;
  j["seconds"] = r.seconds;
  return j.dump();
}

TrainState train_network(model::Network<float>& net, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw TrainError("training set is empty");
  if (net.config().dropout_rate != cfg.dropout_rate) {
    throw TrainError(fmt::format("network dropout rate {} differs from the training config's {}",
                                 net.config().dropout_rate, cfg.dropout_rate));
  }
  if (options.augment) options.augment->validate();

  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto log_path = *options.out_dir / "train_log.jsonl";
    log.open(log_path, std::ios::trunc);
    if (!log) throw TrainError("cannot write " + log_path.string());
  }

  const bool validating = !val_set.empty();
  Adam adam(cfg);
  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  TrainState state;
  std::vector<TensorF> best = net.snapshot();
  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    {
      std::seed_seq seq = keyed_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)});
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
    }

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
      const std::size_t end = std::min(start + bs, n);
      std::vector<TensorF> augmented(end - start);
      if (options.augment) {
        parallel_for(end - start, options.workers, [&](std::size_t k) {
          const std::size_t idx = order[start + k];
          augmented[k] = data::augment(train_set[idx].input, *options.augment, static_cast<std::uint64_t>(epoch), idx);
        });
      }
      std::vector<const TensorF*> inputs;
      std::vector<float> targets;
      for (std::size_t k = start; k < end; ++k) {
        inputs.push_back(options.augment ? &augmented[k - start] : &train_set[order[k]].input);
        targets.push_back(target_of(train_set[order[k]]));
      }

      std::seed_seq seq = keyed_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), batch_index, 0xD0});
      std::mt19937_64 dropout_rng(seq);
      Tape<float> tape;
      model::ForwardContext<float> ctx;
      ctx.mode = model::Mode::kTrain;
      ctx.tape = &tape;
      ctx.dropout_rng = &dropout_rng;
      const auto out = net.forward(data::stack_inputs(inputs), ctx);
      const TensorF loss = bce_loss(out.probabilities, targets, &tape);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergedTrainingError(epoch, fmt::format("training diverged: non-finite loss in epoch {}", epoch));
      }
      loss_sum += value * static_cast<double>(end - start);
      tape.backward(loss);
      adam.step(net.parameters());
      for (auto& p : net.parameters()) {
        if (p.trainable) p.value.zero_grad();
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_acc = evaluate(net, train_set, cfg.batch_size).accuracy;
    bool improved = false;
    if (validating) {
      const EvalResult v = evaluate(net, val_set, cfg.batch_size);
      if (!std::isfinite(v.loss)) {
        throw DivergedTrainingError(epoch, fmt::format("training diverged: non-finite validation loss in epoch {}", epoch));
      }
      rec.val_loss = v.loss;
      rec.val_acc = v.accuracy;
      improved = stopper.update(epoch, v.loss);
      if (improved) best = net.snapshot();
    }
    if (options.timestamps) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }

    if (options.out_dir) {
      model::save_weights(net, *options.out_dir / fmt::format("epoch_{}.w", epoch));
      if (improved || !validating) model::save_weights(net, *options.out_dir / "best.w");
      log << epoch_record_json(rec) << '\n' << std::flush;
    }
    state.epoch = epoch;
    state.step_count = adam.step_count();
    state.history.push_back(rec);
    state.best_val_loss = stopper.best_loss();
    state.best_epoch = validating ? stopper.best_epoch() : epoch;
    state.epochs_since_improvement = stopper.epochs_since_improvement();
    if (options.on_epoch) options.on_epoch(rec);

    if (validating && stopper.should_stop()) {
      state.early_stopped = true;
      break;
    }
    if (options.target_train_accuracy && rec.train_acc >= *options.target_train_accuracy) break;
  }
  if (validating) net.restore(best);
  return state;
}

TrainState run_training(model::Network<float>& net, const data::DatasetManifest& manifest, const TrainConfig& cfg,
                        const TrainOptions& options) {
  const auto train_records = manifest.split_records(data::Split::kTrain);
  const auto val_records = manifest.split_records(data::Split::kValidation);
  if (train_records.empty()) throw TrainError("manifest has an empty train split");
  if (val_records.empty()) throw TrainError("manifest has an empty validation split");
  const std::size_t size = static_cast<std::size_t>(net.config().input_size);
  return train_network(net, data::load_examples(train_records, size), data::load_examples(val_records, size), cfg,
                       options);
}

SanityResult overfit_sanity(model::Network<float>& net, const std::vector<Example>& set, TrainConfig cfg) {
  TrainOptions options;
  options.target_train_accuracy = 1.0;
  SanityResult r;
  r.state = train_network(net, set, {}, cfg, options);
  r.epochs = r.state.epoch;
  r.train_accuracy = r.state.history.back().train_acc;
  return r;
}

}  // namespace snr::train
