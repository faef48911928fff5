#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snr/tape.hpp"
#include "snr/tensor.hpp"

namespace snr {

// A scalar-valued function of `inputs`. It must record onto `tape` when one is
// given and must be deterministic.
using ScalarFn = std::function<TensorD(const std::vector<TensorD>& inputs, Tape<double>* tape)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Forwarded to Tape::inject_fault for the analytic pass.
  std::optional<std::string> fault_op;
  double fault_scale = 1.1;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of `fn` against central differences
// (f(x+eps) - f(x-eps)) / (2 eps), element by element over every input.
// The per-element error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<TensorD>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace snr
