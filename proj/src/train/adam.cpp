#include "snr/train/adam.hpp"

#include <cmath>

namespace snr::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw TrainError("learning_rate must be > 0");
  if (batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (max_epochs < 1) throw TrainError("max_epochs must be >= 1");
  if (patience < 1) throw TrainError("patience must be >= 1");
  if (!(min_delta >= 0.0)) throw TrainError("min_delta must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw TrainError("dropout_rate must lie in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw TrainError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw TrainError("adam_epsilon must be > 0");
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

std::vector<std::string> Adam::tracked() const {
  std::vector<std::string> out;
  for (const auto& [name, m] : moments_) out.push_back(name);
  return out;
}

template <typename T>
void Adam::step(std::vector<model::Parameter<T>>& params) {
  for (const auto& p : params) {
    if (p.trainable && !p.value.has_grad()) throw TrainError("no gradient for trainable parameter " + p.name);
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(beta1_, t), c2 = 1.0 - std::pow(beta2_, t);
  for (auto& p : params) {
    if (!p.trainable) {
      moments_.erase(p.name);
      continue;
    }
    Moments& mo = moments_[p.name];
    const auto g = p.value.grad();
    if (mo.m.size() != g.size()) mo = {std::vector<double>(g.size(), 0.0), std::vector<double>(g.size(), 0.0)};
    auto w = p.value.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * gi;
      mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * gi * gi;
      const double m_hat = mo.m[i] / c1, v_hat = mo.v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr_ * m_hat / (std::sqrt(v_hat) + eps_));
    }
  }
}

template void Adam::step(std::vector<model::Parameter<float>>&);
template void Adam::step(std::vector<model::Parameter<double>>&);

}  // namespace snr::train
