#pragma once

#include <cstdint>
#include <stdexcept>

namespace snr::train {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 10;
  double min_delta = 0.0;
  double dropout_rate = 0.3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;  // throws TrainError
};

}  // namespace snr::train
