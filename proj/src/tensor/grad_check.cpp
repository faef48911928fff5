#include "snr/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace snr {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<TensorD>& inputs) {
  TensorD out = fn(inputs, nullptr);
  if (out.size() != 1) throw AutodiffError("grad_check function must return a scalar, got " + shape_to_string(out.shape()));
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<TensorD>& inputs, const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) throw AutodiffError("grad_check eps must lie in [1e-7, 1e-3]");

  std::vector<TensorD> work;
  work.reserve(inputs.size());
  for (const TensorD& t : inputs) {
    TensorD copy = t.clone();
    copy.set_requires_grad(true);
    work.push_back(copy);
  }

  Tape<double> tape;
  if (options.fault_op) tape.inject_fault(*options.fault_op, options.fault_scale);
  TensorD root = fn(work, &tape);
  if (root.size() != 1) {
    throw AutodiffError("grad_check function must return a scalar, got " + shape_to_string(root.shape()));
  }
  tape.backward(root);

  GradCheckResult result;
  for (std::size_t t = 0; t < work.size(); ++t) {
    TensorD& x = work[t];
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + options.eps;
      const double fp = evaluate(fn, work);
      data[i] = orig - options.eps;
      const double fm = evaluate(fn, work);
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (err > result.max_relative_error) {
        result = GradCheckResult{err, t, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace snr
