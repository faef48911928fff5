#include "snr/app/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "snr/grad_check.hpp"
#include "snr/model/network.hpp"
#include "snr/ops.hpp"
#include "snr/train/loss.hpp"

namespace snr::app {

namespace {

TensorD uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, double min_abs = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    do {
      x = u(rng);
    } while (std::abs(x) < min_abs);
  }
  return TensorD(std::move(shape), std::move(v));
}

// Σ w_i x_i recorded under its own name, so faults injected into the op being
// checked never touch the reduction.
TensorD project(const TensorD& x, const std::vector<double>& w, Tape<double>* tape) {
  double acc = 0.0;
  const auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * w[i];
  TensorD out = TensorD::scalar(acc);
  if (Tape<double>::should_record(tape, {&x})) {
    tape->record("suite_projection", {x}, out, [x, w](std::span<const double> g) {
      std::vector<double> delta(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) delta[i] = g[0] * w[i];
      x.accumulate_grad(delta);
    });
  }
  return out;
}

using OpFn = std::function<TensorD(const std::vector<TensorD>&, Tape<double>*)>;

struct Setup {
  OpFn op;
  std::vector<TensorD> inputs;
};

struct Case {
  std::string name;
  std::function<Setup(std::mt19937_64&)> make;
};

std::vector<double> weights_for(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return w;
}

double check_op(const Setup& s, std::mt19937_64& rng, const GradCheckSuiteOptions& options) {
  const std::size_t out_size = s.op(s.inputs, nullptr).size();
  const std::vector<double> w = weights_for(out_size, rng);
  const ScalarFn fn = [&](const std::vector<TensorD>& in, Tape<double>* tape) { return project(s.op(in, tape), w, tape); };
  GradCheckOptions gc;
  gc.eps = options.eps;
  gc.fault_op = options.fault_op;
  gc.fault_scale = options.fault_scale;
  return grad_check(fn, s.inputs, gc).max_relative_error;
}

ops::BatchNormOptions bn_options(bool batch_stats) {
  ops::BatchNormOptions o;
  o.use_batch_stats = batch_stats;
  o.update_running = false;
  return o;
}

std::vector<Case> op_cases() {
  using V = std::vector<TensorD>;
  std::vector<Case> cases;
  cases.push_back({"add", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::add(in[0], in[1], t); },
                                  {uniform({3, 4}, r, -1, 1), uniform({3, 4}, r, -1, 1)}};
                   }});
  cases.push_back({"sub", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::sub(in[0], in[1], t); },
                                  {uniform({2, 3, 2, 2}, r, -1, 1), uniform({1}, r, -1, 1)}};
                   }});
  cases.push_back({"mul", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::mul(in[0], in[1], t); },
                                  {uniform({2, 3, 2, 2}, r, -1, 1), uniform({3}, r, -1, 1)}};
                   }});
  cases.push_back({"relu", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::relu(in[0], t); },
                                  {uniform({4, 5}, r, -1, 1, 1e-2)}};
                   }});
  cases.push_back({"sigmoid", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::sigmoid(in[0], t); },
                                  {uniform({4, 5}, r, -3, 3)}};
                   }});
  cases.push_back({"scale", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::scale(in[0], -0.7, t); },
                                  {uniform({4, 5}, r, -1, 1)}};
                   }});
  cases.push_back({"conv2d", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) {
                                    return ops::conv2d(in[0], in[1], &in[2], ops::Conv2dParams{2, 1}, t);
                                  },
                                  {uniform({2, 3, 6, 6}, r, -1, 1), uniform({4, 3, 3, 3}, r, -1, 1),
                                   uniform({4}, r, -1, 1)}};
                   }});
  cases.push_back({"max_pool2d", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::max_pool2d(in[0], 3, 2, 1, t); },
                                  {uniform({2, 2, 6, 6}, r, -1, 1)}};
                   }});
  cases.push_back({"global_avg_pool", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::global_avg_pool(in[0], t); },
                                  {uniform({2, 3, 4, 4}, r, -1, 1)}};
                   }});
  cases.push_back({"dense", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::dense(in[0], in[1], in[2], t); },
                                  {uniform({3, 5}, r, -1, 1), uniform({5, 4}, r, -1, 1), uniform({4}, r, -1, 1)}};
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::reshape(in[0], Shape{6, 4}, t); },
                                  {uniform({2, 3, 4}, r, -1, 1)}};
                   }});
  cases.push_back({"sum", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::sum(in[0], t); },
                                  {uniform({3, 4}, r, -1, 1)}};
                   }});
  cases.push_back({"mean", [](std::mt19937_64& r) {
                     return Setup{[](const V& in, Tape<double>* t) { return ops::mean(in[0], t); },
                                  {uniform({3, 4}, r, -1, 1)}};
                   }});
  cases.push_back({"batch_norm", [](std::mt19937_64& r) {
                     // train-mode batch statistics; the running buffers are local per call
                     return Setup{[](const V& in, Tape<double>* t) {
                                    TensorD rm(Shape{3}, 0.0), rv(Shape{3}, 1.0);
                                    return ops::batch_norm(in[0], in[1], in[2], rm, rv, bn_options(true), t);
                                  },
                                  {uniform({4, 3, 3, 3}, r, -2, 2), uniform({3}, r, 0.5, 1.5), uniform({3}, r, -1, 1)}};
                   }});
  cases.push_back({"batch_norm_eval", [](std::mt19937_64& r) {
                     TensorD rm = uniform({3}, r, -0.5, 0.5), rv = uniform({3}, r, 0.5, 2.0);
                     return Setup{[rm, rv](const V& in, Tape<double>* t) {
                                    TensorD m = rm, v = rv;
                                    return ops::batch_norm(in[0], in[1], in[2], m, v, bn_options(false), t);
                                  },
                                  {uniform({2, 3, 3, 3}, r, -2, 2), uniform({3}, r, 0.5, 1.5), uniform({3}, r, -1, 1)}};
                   }});
  cases.push_back({"dropout", [](std::mt19937_64& r) {
                     const std::uint64_t mask_seed = r();
                     return Setup{[mask_seed](const V& in, Tape<double>* t) {
                                    std::mt19937_64 rng(mask_seed);
                                    return ops::dropout(in[0], 0.3, rng, t);
                                  },
                                  {uniform({4, 6}, r, -1, 1)}};
                   }});
  cases.push_back({"bce_loss", [](std::mt19937_64& r) {
                     std::vector<double> y(6);
                     for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>((r() >> 7) & 1U);
                     return Setup{[y](const V& in, Tape<double>* t) { return train::bce_loss(in[0], y, t); },
                                  {uniform({6, 1}, r, 0.1, 0.9)}};
                   }});
  return cases;
}

// The whole tiny network in eval mode, every parameter randomized so that no
// ReLU sits on its kink, checked over the input and all parameters.
double check_network(std::mt19937_64& rng, const GradCheckSuiteOptions& options) {
  const double h = options.network_eps;
  model::NetworkConfig cfg = model::tiny_config(16, {2, 2, 2, 2}, 4);
  cfg.frozen_stages = {};
  cfg.seed = rng();
  model::Network<double> net(cfg);
  for (auto& p : net.parameters()) {
    const TensorD r = uniform(p.value.shape(), rng, -1.0, 1.0, 0.05);
    std::copy(r.data().begin(), r.data().end(), p.value.mutable_data().begin());
  }
  TensorD x = uniform({2, 3, 16, 16}, rng, -1.0, 1.0);
  const std::vector<double> w = weights_for(2, rng);
  const auto loss = [&]() { return project(net.forward(x).logits, w, nullptr).item(); };

  Tape<double> tape;
  if (options.fault_op) tape.inject_fault(*options.fault_op, options.fault_scale);
  model::ForwardContext<double> ctx;
  ctx.tape = &tape;
  x.set_requires_grad(true);
  for (auto& p : net.parameters()) p.value.zero_grad();
  tape.backward(project(net.forward(x, ctx).logits, w, &tape));

  std::vector<TensorD> targets{x};
  for (auto& p : net.parameters()) targets.push_back(p.value);
  double worst = 0.0;
  for (TensorD& t : targets) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + h;
      const double fp = loss();
      d[i] = orig - h;
      const double fm = loss();
      d[i] = orig;
      const double num = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - num) / std::max({std::abs(analytic[i]), std::abs(num), 1e-8}));
    }
  }
  return worst;
}

constexpr const char* kNetworkCase = "network";

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const Case& c : op_cases()) names.push_back(c.name);
  names.emplace_back(kNetworkCase);
  return names;
}

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  return run_gradcheck_suite(options, gradcheck_case_names());
}

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options,
                                              const std::vector<std::string>& cases) {
  if (options.seeds < 1) throw std::invalid_argument("gradcheck needs at least one seed");
  const auto known = gradcheck_case_names();
  for (const std::string& name : cases) {
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw std::invalid_argument("unknown gradcheck case '" + name + "'");
  }
  const auto all = op_cases();
  std::vector<GradCheckRow> rows;
  for (const std::string& name : cases) {
    GradCheckRow row;
    row.name = name;
    const auto it = std::find_if(all.begin(), all.end(), [&](const Case& c) { return c.name == name; });
    for (int s = 0; s < options.seeds; ++s) {
      std::mt19937_64 rng(options.base_seed + static_cast<std::uint64_t>(s));
      const double err = it != all.end() ? check_op(it->make(rng), rng, options) : check_network(rng, options);
      row.max_relative_error = std::max(row.max_relative_error, err);
      ++row.seeds;
    }
    row.passed = row.max_relative_error <= options.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace snr::app
