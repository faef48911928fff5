#include "snr/train/early_stopping.hpp"

#include <algorithm>

#include "snr/train/config.hpp"

namespace snr::train {

EarlyStopping::EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
  if (patience < 1) throw TrainError("patience must be >= 1");
  if (!(min_delta >= 0.0)) throw TrainError("min_delta must be >= 0");
}

bool EarlyStopping::update(int epoch, double val_loss) {
  if (val_loss < best_loss_ - min_delta_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_improvement_ = 0;
    return true;
  }
  ++since_improvement_;
  return false;
}

StopTrace simulate_early_stopping(const std::vector<double>& val_losses, int patience, double min_delta,
                                  int max_epochs) {
  EarlyStopping es(patience, min_delta);
  StopTrace trace;
  const int n = std::min<int>(max_epochs, static_cast<int>(val_losses.size()));
  for (int epoch = 1; epoch <= n; ++epoch) {
    es.update(epoch, val_losses[static_cast<std::size_t>(epoch - 1)]);
    trace.stop_epoch = epoch;
    if (es.should_stop()) {
      trace.early = true;
      break;
    }
  }
  trace.best_epoch = es.best_epoch();
  return trace;
}

}  // namespace snr::train
