#pragma once

#include <map>
#include <string>
#include <vector>

#include "snr/model/network.hpp"
#include "snr/train/config.hpp"

namespace snr::train {

// Adam with bias correction. Moments are kept only for trainable parameters;
// parameters with trainable == false are never read or written.
class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double epsilon);
  explicit Adam(const TrainConfig& cfg)
      : Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon) {}

  // Applies one update from each trainable parameter's accumulated gradient.
  // Throws TrainError if a trainable parameter has no gradient.
  template <typename T>
  void step(std::vector<model::Parameter<T>>& params);

  long step_count() const { return step_count_; }
  // Names of the parameters that currently have moment accumulators.
  std::vector<std::string> tracked() const;

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace snr::train
