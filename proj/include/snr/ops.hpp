#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string_view>

#include "snr/tape.hpp"
#include "snr/tensor.hpp"

// Differentiable tensor operations. Every op takes an optional Tape; the op is
// recorded only when a tape is given and at least one input requires grad.
// Forward values never depend on whether recording happens.
namespace snr::ops {

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kScale };

std::string_view to_string(Elementwise kind);

// Binary ops accept an equal-shape `b`, a single-element `b`, or a
// per-channel `b` whose element count equals a.dim(1).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape = nullptr);
// Output is kept strictly inside (0, 1) even where the exact value rounds to an endpoint.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape = nullptr);

// Dispatch by kind. For kScale, `b` must hold a single value used as a constant factor.
template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>* b, Tape<T>* tape = nullptr);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of NCHW `input` with OIHW `kernel`, zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, Conv2dParams params,
                 Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::nullptr_t, Conv2dParams params,
                 Tape<T>* tape = nullptr) {
  return conv2d(input, kernel, static_cast<const Tensor<T>*>(nullptr), params, tape);
}

enum class PoolKind { kMax, kGlobalAvg };

// Padded positions never win the max. Gradient goes to the first maximum in
// row-major order within each window.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride, std::size_t padding = 0,
                     Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> pool(const Tensor<T>& input, PoolKind kind, std::optional<std::size_t> window = std::nullopt,
               std::optional<std::size_t> stride = std::nullopt, std::size_t padding = 0, Tape<T>* tape = nullptr);

// input N×F times weight F×U plus bias U.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mean(const Tensor<T>& input, Tape<T>* tape = nullptr);

struct BatchNormOptions {
  bool use_batch_stats = false;  // train-mode normalization
  bool update_running = false;   // only meaningful with use_batch_stats
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// Per-channel normalization over N (and H, W for 4-D input). `running_mean`
// and `running_var` are updated in place when options.update_running is set;
// the running variance uses the unbiased batch estimate.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, const BatchNormOptions& options, Tape<T>* tape = nullptr);

// Inverted dropout: kept activations are scaled by 1/(1-rate).
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, std::mt19937_64& rng, Tape<T>* tape = nullptr);

}  // namespace snr::ops
