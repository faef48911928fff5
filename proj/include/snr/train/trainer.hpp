#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snr/data/dataset.hpp"
#include "snr/data/manifest.hpp"
#include "snr/data/transforms.hpp"
#include "snr/model/network.hpp"
#include "snr/train/config.hpp"

namespace snr::train {

class DivergedTrainingError : public TrainError {
 public:
  DivergedTrainingError(int epoch, const std::string& what) : TrainError(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean train-mode batch loss
  double train_acc = 0.0;   // eval-mode accuracy on the unaugmented training set
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  int epoch = 0;
  long step_count = 0;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  int epochs_since_improvement = 0;
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  // Augmentation applied to training samples; nullopt trains on the raw tensors.
  std::optional<data::AugmentConfig> augment;
  int workers = 1;
  // When set, checkpoints (epoch_<n>.w, best.w) and train_log.jsonl go here.
  std::optional<std::filesystem::path> out_dir;
  bool timestamps = true;
  // Stop as soon as eval-mode training accuracy reaches this value.
  std::optional<double> target_train_accuracy;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Binary targets and accuracy share the ≥ 0.5 convention.
double accuracy(const std::vector<float>& probabilities, const std::vector<data::Example>& examples);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<float> probabilities;
  std::vector<float> logits;
};

// Eval-mode forward over `examples` in batches; no augmentation.
EvalResult evaluate(model::Network<float>& net, const std::vector<data::Example>& examples, int batch_size);

// Mini-batch training with per-epoch shuffling keyed by (seed, epoch) and
// augmentation keyed by (seed, epoch, example index). With a nonempty
// validation set, early stopping tracks validation loss and the network is
// left holding the best epoch's weights; without one, training runs until
// max_epochs or the target accuracy and keeps the final weights.
TrainState train_network(model::Network<float>& net, const std::vector<data::Example>& train_set,
                         const std::vector<data::Example>& val_set, const TrainConfig& cfg,
                         const TrainOptions& options = {});

// Manifest-driven training: requires nonempty train and validation splits.
TrainState run_training(model::Network<float>& net, const data::DatasetManifest& manifest, const TrainConfig& cfg,
                        const TrainOptions& options);

struct SanityResult {
  double train_accuracy = 0.0;
  int epochs = 0;
  TrainState state;
};

// Trains on `set` without augmentation or validation until eval-mode training
// accuracy reaches 100% or cfg.max_epochs run out.
SanityResult overfit_sanity(model::Network<float>& net, const std::vector<data::Example>& set, TrainConfig cfg);

std::string epoch_record_json(const EpochRecord& r);

}  // namespace snr::train
