#pragma once

#include <vector>

namespace snr::testing {

// Hand-traced early-stopping cases. An epoch improves when its loss is below
// best - min_delta; a run stops after `patience` consecutive non-improving epochs.
struct StoppingTrace {
  const char* name;
  std::vector<double> val_losses;
  int patience;
  double min_delta;
  int max_epochs;
  int stop_epoch;
  int best_epoch;
  bool early;
};

inline const std::vector<StoppingTrace>& stopping_traces() {
  static const std::vector<StoppingTrace> traces{
      // waits: -, -, 1, 2 -> stop
      {"rise_after_two", {1.0, 0.9, 0.95, 0.96, 0.97}, 2, 0.0, 100, 4, 2, true},
      {"strictly_decreasing", {5, 4, 3, 2, 1}, 2, 0.0, 5, 5, 5, false},
      // equal loss is not an improvement
      {"flat_patience_one", {1, 1, 1, 1}, 1, 0.0, 100, 2, 1, true},
      // 0.95 misses 1 - 0.05, 0.94 clears it, 0.93 misses 0.94 - 0.05
      {"min_delta_gate", {1, 0.95, 0.94, 0.93}, 2, 0.05, 4, 4, 3, false},
      {"late_improvement_resets", {3, 2, 2.5, 1.5, 1.6, 1.7, 1.8}, 3, 0.0, 100, 7, 4, true},
      {"max_epochs_cut", {1, 0.9, 0.8, 0.7, 0.6, 0.5}, 3, 0.0, 3, 3, 3, false},
      {"dip_then_rise", {0.5, 0.6, 0.4, 0.7, 0.8}, 2, 0.0, 100, 5, 3, true},
      {"tiny_wiggle", {2, 2.0000001, 1.9999999}, 1, 0.0, 100, 2, 1, true},
      {"tie_then_drop", {1, 0.5, 0.5, 0.4}, 2, 0.0, 4, 4, 4, false},
      {"monotone_rise", {1, 2, 3, 4, 5, 6}, 5, 0.0, 100, 6, 1, true},
      // 0.69 < 0.695 and 0.68 < 0.685 improve; 0.679 is not below 0.675
      {"shrinking_gains", {0.7, 0.69, 0.68, 0.679}, 1, 0.005, 100, 4, 3, true},
  };
  return traces;
}

}  // namespace snr::testing
