#pragma once

#include <vector>

#include "snr/tape.hpp"
#include "snr/tensor.hpp"

namespace snr::train {

inline constexpr double kProbabilityClamp = 1e-7;

// Mean binary cross-entropy of N×1 (or N) probabilities against 0/1 targets,
// with p clamped to [1e-7, 1 - 1e-7]. Where the clamp is active the gradient
// with respect to p is zero.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probabilities, const std::vector<T>& targets, Tape<T>* tape = nullptr);

}  // namespace snr::train
