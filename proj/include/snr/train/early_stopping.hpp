#pragma once

#include <limits>
#include <vector>

namespace snr::train {

// Validation-loss early stopping. An epoch improves when its loss is below
// best - min_delta; training stops once `patience` consecutive epochs fail
// to improve.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta);

  // Returns true if `val_loss` is a new best.
  bool update(int epoch, double val_loss);
  bool should_stop() const { return since_improvement_ >= patience_; }

  double best_loss() const { return best_loss_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_since_improvement() const { return since_improvement_; }

 private:
  int patience_;
  double min_delta_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int since_improvement_ = 0;
};

struct StopTrace {
  int stop_epoch = 0;  // last epoch that ran (1-based)
  int best_epoch = 0;
  bool early = false;  // stopped by patience rather than max_epochs
};

// Replays the stopping rule over a sequence of per-epoch validation losses.
StopTrace simulate_early_stopping(const std::vector<double>& val_losses, int patience, double min_delta,
                                  int max_epochs);

}  // namespace snr::train
