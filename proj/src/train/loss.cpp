#include "snr/train/loss.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace snr::train {

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probabilities, const std::vector<T>& targets, Tape<T>* tape) {
  const std::size_t n = probabilities.size();
  if (n != targets.size() || n == 0) {
    throw ShapeError("bce_loss: " + std::to_string(n) + " probabilities vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  const auto p = probabilities.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = static_cast<double>(targets[i]);
    if (y != 0.0 && y != 1.0) throw TensorError("bce_loss targets must be 0 or 1");
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (Tape<T>::should_record(tape, {&probabilities})) {
    tape->record("bce_loss", {probabilities}, loss, [probabilities, targets, n, lo, hi](std::span<const T> g) {
      const auto pv = probabilities.data();
      std::vector<T> gp(n, T(0));
      for (std::size_t i = 0; i < n; ++i) {
        const double q = static_cast<double>(pv[i]);
        if (q < lo || q > hi) continue;
        const double y = static_cast<double>(targets[i]);
        gp[i] = static_cast<T>(static_cast<double>(g[0]) * (-y / q + (1.0 - y) / (1.0 - q)) / static_cast<double>(n));
      }
      probabilities.accumulate_grad(gp);
    });
  }
  return loss;
}

template Tensor<float> bce_loss(const Tensor<float>&, const std::vector<float>&, Tape<float>*);
template Tensor<double> bce_loss(const Tensor<double>&, const std::vector<double>&, Tape<double>*);

}  // namespace snr::train
