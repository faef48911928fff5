#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "snr/grad_check.hpp"
#include "snr/ops.hpp"
#include "support/test_util.hpp"

namespace snr {
namespace {

using snr::testing::grad_vector;
using snr::testing::random_tensor;
using snr::testing::to_vector;

// Direct seven-loop correlation, written independently of the im2col path.
TensorD naive_conv(const TensorD& x, const TensorD& k, const TensorD* b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  TensorD out(Shape{n, o, oh, ow});
  auto dst = out.mutable_data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b ? (*b)[oc] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x.at(s, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * k.at(oc, ic, i, j);
              }
          dst[((s * o + oc) * oh + y) * ow + xx] = acc;
        }
  return out;
}

// Test-local central differences of sum(out * weights) w.r.t. one input.
template <typename Fn>
std::vector<double> numeric_grad(Fn f, TensorD& x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  auto d = x.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double orig = d[i];
    d[i] = orig + eps;
    const double fp = f();
    d[i] = orig - eps;
    const double fm = f();
    d[i] = orig;
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

TEST(Tensor, ShapeInvariants) {
  TensorF t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(TensorF(Shape{2, 0}), ShapeError);
  EXPECT_THROW(TensorF(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  t.set_requires_grad(true);
  EXPECT_EQ(t.mutable_grad().size(), t.size());
}

TEST(Elementwise, SigmoidOfZeroIsHalf) {
  TensorF z(Shape{2, 3}, 0.0f);
  for (float v : to_vector(ops::sigmoid(z))) EXPECT_EQ(v, 0.5f);
}

TEST(Elementwise, SigmoidStaysInsideOpenUnitInterval) {
  TensorF x = TensorF::of(Shape{4}, {-200.f, -30.f, 30.f, 200.f});
  for (float v : to_vector(ops::sigmoid(x))) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Elementwise, ReluDefinition) {
  TensorF x = TensorF::of(Shape{3}, {-1.f, 0.f, 2.f});
  EXPECT_EQ(to_vector(ops::relu(x)), (std::vector<float>{0.f, 0.f, 2.f}));
}

TEST(Elementwise, MulProductRule) {
  TensorD a = TensorD::of(Shape{3}, {1, 2, 3});
  TensorD b = TensorD::of(Shape{3}, {4, 5, 6});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::mul(a, b, &tape);
  EXPECT_EQ(to_vector(y), (std::vector<double>{4, 10, 18}));
  tape.backward(ops::sum(y, &tape));
  EXPECT_EQ(grad_vector(a), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(grad_vector(b), (std::vector<double>{1, 2, 3}));
}

TEST(Elementwise, ChannelBroadcastReducesGradient) {
  TensorD a(Shape{2, 3, 2, 2}, 1.0);
  TensorD b = TensorD::of(Shape{3}, {1, 2, 3});
  b.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::add(a, b, &tape);
  EXPECT_EQ(y.at(1, 2, 1, 1), 4.0);
  tape.backward(ops::sum(y, &tape));
  // each channel value is used N*H*W = 8 times
  EXPECT_EQ(grad_vector(b), (std::vector<double>{8, 8, 8}));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  TensorF a(Shape{2, 3});
  TensorF b(Shape{4});
  try {
    ops::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4]"), std::string::npos);
  }
}

TEST(Elementwise, DispatchMatchesNamedOps) {
  TensorD a = random_tensor(Shape{2, 3}, 1);
  TensorD b = random_tensor(Shape{2, 3}, 2);
  TensorD f = TensorD::scalar(2.5);
  EXPECT_EQ(to_vector(ops::elementwise(ops::Elementwise::kSub, a, &b)), to_vector(ops::sub(a, b)));
  EXPECT_EQ(to_vector(ops::elementwise(ops::Elementwise::kScale, a, &f)), to_vector(ops::scale(a, 2.5)));
  EXPECT_THROW(ops::elementwise(ops::Elementwise::kAdd, a, static_cast<const TensorD*>(nullptr)), TensorError);
}

TEST(Conv2d, ScalingKernel) {
  TensorF x(Shape{1, 1, 3, 3}, 1.0f);
  TensorF k(Shape{1, 1, 1, 1}, 2.0f);
  TensorF y = ops::conv2d(x, k, nullptr, {1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 2.0f);
}

TEST(Conv2d, HandCorrelation) {
  TensorF x = TensorF::of(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  TensorF k = TensorF::of(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  TensorF y = ops::conv2d(x, k, nullptr, {1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 5.0f);
}

TEST(Conv2d, OnesPointwiseKernelIsIdentityBitExact) {
  TensorF x = random_tensor<float>(Shape{2, 1, 5, 7}, 3);
  TensorF k(Shape{1, 1, 1, 1}, 1.0f);
  EXPECT_EQ(to_vector(ops::conv2d(x, k, nullptr, {1, 0})), to_vector(x));
}

TEST(Conv2d, MatchesDirectLoopsWithStrideAndPadding) {
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 3}}) {
    TensorD x = random_tensor(Shape{2, 3, 7, 6}, 10 + stride + pad);
    TensorD k = random_tensor(Shape{4, 3, 3, 3}, 20 + stride);
    TensorD b = random_tensor(Shape{4}, 30);
    TensorD got = ops::conv2d(x, k, &b, {stride, pad});
    TensorD want = naive_conv(x, k, &b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, GradientsMatchCentralDifferences) {
  TensorD x = random_tensor(Shape{2, 3, 5, 5}, 7);
  TensorD k = random_tensor(Shape{4, 3, 3, 3}, 8);
  TensorD b = random_tensor(Shape{4}, 9);
  TensorD w = random_tensor(Shape{2, 4, 5, 5}, 11);  // fixed projection makes the output scalar
  auto loss = [&] { return ops::sum(ops::mul(naive_conv(x, k, &b, 1, 1), w)).item(); };

  x.set_requires_grad(true);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(ops::mul(ops::conv2d(x, k, &b, {1, 1}, &tape), w, &tape), &tape));

  for (TensorD* t : {&x, &k, &b}) {
    const std::vector<double> numeric = numeric_grad(loss, *t);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double a = t->grad()[i];
      const double rel = std::abs(a - numeric[i]) / std::max({std::abs(a), std::abs(numeric[i]), 1e-8});
      EXPECT_LE(rel, 1e-3) << "element " << i;
    }
  }
}

TEST(Conv2d, Rejections) {
  TensorF x(Shape{1, 2, 4, 4});
  TensorF k(Shape{1, 3, 3, 3});
  EXPECT_THROW(ops::conv2d(x, k, nullptr, {1, 0}), ShapeError);
  TensorF big(Shape{1, 2, 7, 7});
  EXPECT_THROW(ops::conv2d(x, big, nullptr, {1, 1}), ShapeError);
}

TEST(Pool, GlobalAverageOfConstant) {
  TensorF x(Shape{1, 2, 3, 3}, 7.0f);
  TensorF y = ops::global_avg_pool(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 7.0f);
}

TEST(Pool, GlobalAverageBackwardIsUniform) {
  TensorD x = TensorD::of(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::pool(x, ops::PoolKind::kGlobalAvg, std::nullopt, std::nullopt, 0, &tape));
  EXPECT_EQ(grad_vector(x), (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
}

TEST(Pool, MaxRoutesGradientToArgmax) {
  TensorD x = TensorD::of(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::max_pool2d(x, 2, 2, 0, &tape);
  EXPECT_EQ(y.item(), 4.0);
  tape.backward(y);
  EXPECT_EQ(grad_vector(x), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Pool, MaxTieGoesToFirstOccurrence) {
  TensorD x = TensorD::of(Shape{1, 1, 2, 2}, {5, 1, 5, 5});
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::max_pool2d(x, 2, 2, 0, &tape));
  EXPECT_EQ(grad_vector(x), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Pool, Rejections) {
  TensorF x(Shape{1, 1, 2, 2});
  EXPECT_THROW(ops::max_pool2d(x, 3, 1, 0), ShapeError);
  EXPECT_THROW(ops::pool(x, ops::PoolKind::kMax), TensorError);
}

TEST(Dense, IdentityWeight) {
  TensorF x = random_tensor<float>(Shape{3, 4}, 5);
  TensorF w(Shape{4, 4}, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) w.mutable_data()[i * 4 + i] = 1.0f;
  EXPECT_EQ(to_vector(ops::dense(x, w, TensorF::zeros(Shape{4}))), to_vector(x));
}

TEST(Dense, HandAffine) {
  TensorF x = TensorF::of(Shape{1, 2}, {1, 2});
  TensorF w = TensorF::of(Shape{2, 1}, {1, 1});
  TensorF b = TensorF::of(Shape{1}, {3});
  EXPECT_EQ(ops::dense(x, w, b).item(), 6.0f);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  const GradCheckResult r = grad_check(
      [](const std::vector<TensorD>& in, Tape<double>* tape) {
        return ops::sum(ops::mul(ops::dense(in[0], in[1], in[2], tape), in[3], tape), tape);
      },
      {random_tensor(Shape{3, 4}, 1), random_tensor(Shape{4, 2}, 2), random_tensor(Shape{2}, 3),
       random_tensor(Shape{3, 2}, 4)});
  EXPECT_LE(r.max_relative_error, 1e-3);
}

TEST(Dense, DimensionMismatch) {
  EXPECT_THROW(ops::dense(TensorF(Shape{2, 3}), TensorF(Shape{4, 2}), TensorF(Shape{2})), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  TensorD x = random_tensor(Shape{2, 3}, 4);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(x, &tape));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, PowerRule) {
  TensorD x = TensorD::scalar(3.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::mul(x, x, &tape));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, DiamondAccumulates) {
  TensorD x = TensorD::scalar(1.5);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::add(x, x, &tape));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, FanOutIsKFold) {
  TensorD x = random_tensor(Shape{4}, 12);
  TensorD single = x.clone();
  single.set_requires_grad(true);
  x.set_requires_grad(true);
  Tape<double> t1;
  t1.backward(ops::sum(ops::sigmoid(single, &t1), &t1));
  for (int k : {2, 3, 5}) {
    x.zero_grad();
    Tape<double> tape;
    TensorD acc = ops::sum(ops::sigmoid(x, &tape), &tape);
    for (int i = 1; i < k; ++i) acc = ops::add(acc, ops::sum(ops::sigmoid(x, &tape), &tape), &tape);
    tape.backward(acc);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[i], k * single.grad()[i], 1e-15);
  }
}

TEST(Backward, RejectsNonScalarAndForeignRoot) {
  TensorD x = random_tensor(Shape{3}, 1);
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::relu(x, &tape);
  EXPECT_THROW(tape.backward(y), AutodiffError);
  Tape<double> other;
  TensorD s = ops::sum(y, &tape);
  EXPECT_THROW(other.backward(s), AutodiffError);
  EXPECT_THROW(tape.backward(x.clone()), AutodiffError);
}

TEST(Backward, RetainModeAllowsSecondTraversal) {
  TensorD x = TensorD::scalar(2.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::mul(x, x, &tape);
  tape.backward(y, BackwardMode::kRetain);
  EXPECT_EQ(tape.size(), 1u);
  tape.backward(y, BackwardMode::kRetain);
  EXPECT_EQ(x.grad()[0], 8.0);  // leaves accumulate, intermediates reset
  tape.backward(y);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, ForwardIndependentOfRecording) {
  TensorF x = random_tensor<float>(Shape{2, 3, 6, 6}, 21);
  TensorF k = random_tensor<float>(Shape{4, 3, 3, 3}, 22);
  auto run = [&](Tape<float>* tape) {
    TensorF h = ops::relu(ops::conv2d(x, k, nullptr, {2, 1}, tape), tape);
    return to_vector(ops::sigmoid(ops::global_avg_pool(ops::max_pool2d(h, 2, 1, 0, tape), tape), tape));
  };
  const auto plain = run(nullptr);
  x.set_requires_grad(true);
  Tape<float> tape;
  EXPECT_EQ(run(&tape), plain);
  EXPECT_GT(tape.size(), 0u);
}

TEST(GradCheck, LinearFunctionIsExactToRounding) {
  const GradCheckResult r = grad_check(
      [](const std::vector<TensorD>& in, Tape<double>* tape) {
        return ops::sum(ops::scale(ops::add(in[0], in[1], tape), 3.0, tape), tape);
      },
      {random_tensor(Shape{5}, 1), random_tensor(Shape{5}, 2)});
  EXPECT_LE(r.max_relative_error, 1e-9);
}

TEST(GradCheck, SigmoidAtZero) {
  TensorD x = TensorD::scalar(0.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sigmoid(x, &tape));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
  const GradCheckResult r = grad_check(
      [](const std::vector<TensorD>& in, Tape<double>* t) { return ops::sigmoid(in[0], t); }, {TensorD::scalar(0.0)});
  EXPECT_LE(std::abs(r.analytic - r.numeric), 1e-8);
  EXPECT_LE(r.max_relative_error, 1e-8);
}

TEST(GradCheck, ConvReluGlobalAverage) {
  const GradCheckResult r = grad_check(
      [](const std::vector<TensorD>& in, Tape<double>* tape) {
        TensorD h = ops::relu(ops::conv2d(in[0], in[1], nullptr, {1, 1}, tape), tape);
        return ops::sum(ops::global_avg_pool(h, tape), tape);
      },
      {random_tensor(Shape{1, 2, 5, 5}, 3, 0.05), random_tensor(Shape{3, 2, 3, 3}, 4, 0.05)});
  EXPECT_LE(r.max_relative_error, 1e-3);
}

TEST(GradCheck, DetectsCorruptedBackwardRule) {
  GradCheckOptions opts;
  opts.fault_op = "relu";
  const GradCheckResult r = grad_check(
      [](const std::vector<TensorD>& in, Tape<double>* tape) { return ops::sum(ops::relu(in[0], tape), tape); },
      {random_tensor(Shape{6}, 5)}, opts);
  EXPECT_GT(r.max_relative_error, 1e-3);
}

TEST(GradCheck, RejectsBadArguments) {
  auto vector_valued = [](const std::vector<TensorD>& in, Tape<double>* tape) { return ops::relu(in[0], tape); };
  EXPECT_THROW(grad_check(vector_valued, {random_tensor(Shape{3}, 1)}), AutodiffError);
  GradCheckOptions opts;
  opts.eps = 1e-2;
  EXPECT_THROW(grad_check(vector_valued, {random_tensor(Shape{1}, 1)}, opts), AutodiffError);
}

TEST(BatchNorm, TrainModeStandardizes) {
  TensorD x = random_tensor(Shape{4, 3, 5, 5}, 9, 0.0, 3.0);
  TensorD gamma(Shape{3}, 1.0), beta(Shape{3}, 0.0), rm(Shape{3}, 0.0), rv(Shape{3}, 1.0);
  ops::BatchNormOptions opts;
  opts.use_batch_stats = true;
  opts.update_running = true;
  TensorD y = ops::batch_norm(x, gamma, beta, rm, rv, opts);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) m += y[(n * 3 + c) * 25 + i];
    m /= 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) v += std::pow(y[(n * 3 + c) * 25 + i] - m, 2);
    v /= 100;
    EXPECT_LE(std::abs(m), 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-4);
    EXPECT_GE(rv[c], 0.0);
    EXPECT_NE(rm[c], 0.0);  // running mean moved toward the batch mean
  }
}

TEST(BatchNorm, GradientsInBothModes) {
  for (bool train : {true, false}) {
    const GradCheckResult r = grad_check(
        [train](const std::vector<TensorD>& in, Tape<double>* tape) {
          TensorD rm(Shape{3}, 0.1), rv(Shape{3}, 1.5);
          ops::BatchNormOptions opts;
          opts.use_batch_stats = train;
          TensorD y = ops::batch_norm(in[0], in[1], in[2], rm, rv, opts, tape);
          return ops::sum(ops::mul(y, in[3], tape), tape);
        },
        {random_tensor(Shape{2, 3, 3, 3}, 1), random_tensor(Shape{3}, 2), random_tensor(Shape{3}, 3),
         random_tensor(Shape{2, 3, 3, 3}, 4)});
    EXPECT_LE(r.max_relative_error, 1e-3) << (train ? "train" : "eval");
  }
}

TEST(Dropout, InvertedScalingPreservesMean) {
  TensorD x(Shape{1, 1}, 2.0);
  std::mt19937_64 rng(3);
  double acc = 0;
  for (int i = 0; i < 10000; ++i) acc += ops::dropout(x, 0.3, rng).item();
  EXPECT_NEAR(acc / 10000, 2.0, 0.02 * 2.0);
  EXPECT_THROW(ops::dropout(x, 1.0, rng), TensorError);
}

}  // namespace
}  // namespace snr
