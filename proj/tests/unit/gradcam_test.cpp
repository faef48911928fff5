#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "snr/data/transforms.hpp"
#include "snr/explain/gradcam.hpp"
#include "support/test_util.hpp"

namespace snr::explain {
namespace {

using model::Network;
using snr::testing::random_tensor;
using snr::testing::to_vector;

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "snr_gradcam_test" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

void fill(TensorF t, float v) { std::ranges::fill(t.mutable_data(), v); }

TensorF captured(Network<float>& net, const TensorF& input, const std::string& layer) {
  model::ForwardContext<float> ctx;
  ctx.capture = layer;
  return net.forward(input, ctx).captured;
}

// Block-average an H×W map down to h×w.
std::vector<double> block_average(const std::vector<float>& v, std::size_t H, std::size_t W, std::size_t h,
                                  std::size_t w) {
  std::vector<double> out(h * w, 0.0);
  const std::size_t by = H / h, bx = W / w;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) out[(y / by) * w + x / bx] += v[y * W + x];
  for (double& o : out) o /= static_cast<double>(by * bx);
  return out;
}

// Stage 4 reduced to one channel, with every unit on the path from the
// target activation to the logit held active and positively weighted.
Network<float> single_channel_net() {
  Network<float> net(model::tiny_config(128, {2, 2, 2, 1}, 4));
  auto& block = net.blocks().back();
  fill(block.branch.back().bn.scale, 1.0f);
  fill(block.projection->bn.shift, 50.0f);
  fill(net.head_hidden_weight(), 0.1f);
  fill(net.head_hidden_bias(), 1.0f);
  fill(net.head_output_weight(), 0.2f);
  return net;
}

TEST(GradCam, SingleChannelMatchesActivationArgmax) {
  Network<float> net = single_channel_net();
  const std::string layer = net.last_conv_name();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TensorF x = random_tensor<float>(Shape{1, 3, 128, 128}, seed);
    const TensorF a = captured(net, x, layer);
    ASSERT_EQ(a.shape(), (Shape{1, 1, 4, 4}));
    const auto av = to_vector(a);
    const std::size_t want = static_cast<std::size_t>(std::max_element(av.begin(), av.end()) - av.begin());
    ASSERT_GT(av[want], 0.0f);
    const Heatmap h = gradcam(net, x);
    const std::size_t got_raw = static_cast<std::size_t>(std::max_element(h.raw.begin(), h.raw.end()) - h.raw.begin());
    EXPECT_EQ(got_raw, want) << seed;
    // the upsampled peak lies in the 32×32 cell of that activation
    const std::size_t peak = h.argmax();
    EXPECT_EQ((peak / h.width) / 32 * 4 + (peak % h.width) / 32, want) << seed;
  }
}

TEST(GradCam, DisconnectedLogitGivesZeroMap) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  fill(net.head_output_weight(), 0.0f);
  const Heatmap h = gradcam(net, random_tensor<float>(Shape{1, 3, 64, 64}, 1));
  EXPECT_TRUE(std::all_of(h.values.begin(), h.values.end(), [](float v) { return v == 0.0f; }));
  EXPECT_TRUE(std::all_of(h.raw.begin(), h.raw.end(), [](double v) { return v == 0.0; }));
}

TEST(GradCam, RandomInputsAreNormalizedAndFullSize) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  int nonzero = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TensorF x = random_tensor<float>(Shape{3, 64, 64}, seed, -2.0, 2.0);
    const Heatmap h = gradcam(net, x, {}, {7, 2});
    ASSERT_EQ(h.height, 64u);
    ASSERT_EQ(h.width, 64u);
    ASSERT_EQ(h.values.size(), 64u * 64u);
    const float mx = *std::max_element(h.values.begin(), h.values.end());
    EXPECT_TRUE(mx == 0.0f || mx == 1.0f) << mx;
    EXPECT_GE(*std::min_element(h.values.begin(), h.values.end()), 0.0f);
    nonzero += mx == 1.0f;
  }
  EXPECT_GT(nonzero, 0);
}

TEST(GradCam, LeavesNetworkUntouched) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  std::vector<bool> flags;
  for (const auto& p : net.parameters()) flags.push_back(p.value.requires_grad());
  gradcam(net, random_tensor<float>(Shape{1, 3, 64, 64}, 3));
  for (std::size_t i = 0; i < flags.size(); ++i) {
    EXPECT_EQ(net.parameters()[i].value.requires_grad(), flags[i]);
    EXPECT_FALSE(net.parameters()[i].value.has_grad()) << net.parameters()[i].name;
  }
}

TEST(GradCam, Deterministic) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  const TensorF x = random_tensor<float>(Shape{1, 3, 64, 64}, 8);
  const Heatmap a = gradcam(net, x), b = gradcam(net, x);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.raw, b.raw);
}

TEST(GradCam, ScaledActivationsScaleRawMapOnly) {
  const TensorF a = random_tensor<float>(Shape{1, 3, 4, 4}, 4, -1.0, 1.0);
  const auto g = to_vector(random_tensor<float>(Shape{1, 3, 4, 4}, 5, -1.0, 1.0));
  const auto raw = cam_from_gradients(a, g);
  for (float c : {0.5f, 2.0f, 8.0f}) {
    TensorF scaled = a.clone();
    for (float& v : scaled.mutable_data()) v *= c;
    const auto raw_c = cam_from_gradients(scaled, g);
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(raw_c[i], c * raw[i], 1e-6 * (1 + c * raw[i]));
    const auto n = upsample_and_normalize(raw, 4, 4, 32, 32), n_c = upsample_and_normalize(raw_c, 4, 4, 32, 32);
    for (std::size_t i = 0; i < n.size(); ++i) EXPECT_NEAR(n_c[i], n[i], 1e-6);
  }
}

TEST(GradCam, NegativeClassMapHasComplementarySupport) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  GradCamOptions neg;
  neg.negative_class = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TensorF x = random_tensor<float>(Shape{1, 3, 64, 64}, seed);
    const Heatmap p = gradcam(net, x), n = gradcam(net, x, neg);
    for (std::size_t i = 0; i < p.raw.size(); ++i) EXPECT_TRUE(p.raw[i] == 0.0 || n.raw[i] == 0.0);
  }
}

// Averaging a half-pixel bilinear upsample over each source cell gives back
// the grid smoothed by [1/8, 3/4, 1/8] along each axis (edges clamped), for
// any integer factor: within a cell the interpolation weight on a neighbour
// averages to 1/8.
std::vector<double> smooth_3tap(const std::vector<double>& r, std::size_t h, std::size_t w) {
  auto at = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return r[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  std::vector<double> out(h * w);
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double v = 0.0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) v += (dy == 0 ? 0.75 : 0.125) * (dx == 0 ? 0.75 : 0.125) * at(y + dy, x + dx);
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = v;
    }
  }
  return out;
}

std::vector<double> normalized(std::vector<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  for (double& x : v) x /= m;
  return v;
}

TEST(GradCam, UpsampleThenAverageIsThreeTapSmoothing) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  GradCamOptions opts;
  opts.target_layer = "stage3.block1.conv2";  // 4×4 grid, factor 16
  int maps = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Heatmap h = gradcam(net, random_tensor<float>(Shape{1, 3, 64, 64}, seed), opts);
    if (*std::max_element(h.raw.begin(), h.raw.end()) == 0.0) continue;
    const auto got = normalized(block_average(h.values, h.height, h.width, h.raw_height, h.raw_width));
    const auto want = normalized(smooth_3tap(h.raw, h.raw_height, h.raw_width));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << seed << " " << i;
    ++maps;
  }
  EXPECT_GT(maps, 10);
}

// Blob-shaped maps, as Grad-CAM produces on the 7×7 grid of a 224 input, are
// recovered by averaging to within 5% mean absolute error.
TEST(GradCam, UpsampleRecoversSmoothMaps) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(0.0, 6.0), width(1.5, 3.0), weight(0.2, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> raw(49, 0.0);
    for (int bump = 0; bump < 3; ++bump) {
      const double cy = pos(rng), cx = pos(rng), s = width(rng), a = weight(rng);
      for (std::size_t y = 0; y < 7; ++y)
        for (std::size_t x = 0; x < 7; ++x)
          raw[y * 7 + x] += a * std::exp(-(std::pow(static_cast<double>(y) - cy, 2) + std::pow(static_cast<double>(x) - cx, 2)) / (2 * s * s));
    }
    const auto values = upsample_and_normalize(raw, 7, 7, 224, 224);
    const auto got = normalized(block_average(values, 224, 224, 7, 7));
    const auto want = normalized(raw);
    double mae = 0.0;
    for (std::size_t i = 0; i < 49; ++i) mae += std::abs(got[i] - want[i]);
    EXPECT_LE(mae / 49.0, 0.05) << trial;
  }
}

TEST(GradCam, UnknownLayerRejected) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  GradCamOptions opts;
  opts.target_layer = "stage9.block1.conv1";
  EXPECT_THROW(gradcam(net, random_tensor<float>(Shape{1, 3, 64, 64}, 0), opts), GradCamError);
  opts.target_layer = "stage3";
  EXPECT_EQ(gradcam(net, random_tensor<float>(Shape{1, 3, 64, 64}, 0), opts).raw.size(), 16u);
  EXPECT_THROW(gradcam(net, random_tensor<float>(Shape{2, 3, 64, 64}, 0)), GradCamError);
}

TEST(Probe, FullImagePatchAlwaysHits) {
  Network<float> net(model::tiny_config(64, {2, 2, 4, 4}, 4));
  fill(net.head_output_bias(), 20.0f);  // everything predicted positive
  auto images = data::bright_dark_squares(4, 64, 2);
  for (auto& im : images) im.patch = {0, 0, 64, 64};
  const ProbeResult r = localization_probe(net, images);
  EXPECT_EQ(r.positives, 4u);
  EXPECT_EQ(r.evaluated, 4u);
  EXPECT_EQ(r.hit_rate(), 1.0);
}

TEST(Probe, DilationClipsToImage) {
  const data::Box d = dilate({2, 50, 10, 60}, 16, 64, 64);
  EXPECT_EQ(d.y0, 0u);
  EXPECT_EQ(d.x0, 34u);
  EXPECT_EQ(d.y1, 26u);
  EXPECT_EQ(d.x1, 64u);
}

Heatmap flat_heatmap(std::size_t h, std::size_t w, std::vector<float> values) {
  Heatmap m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  m.input_ref = {12, 3};
  return m;
}

TEST(Overlay, ZeroHeatmapReplicatesGray) {
  data::ImageBuffer gray(2, 3);
  gray.pixels = {0.0f, 0.2f, 0.4f, 0.6f, 0.8f, 1.0f};
  const auto rgb = overlay_rgb(flat_heatmap(2, 3, std::vector<float>(6, 0.0f)), gray);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto g = static_cast<std::uint8_t>(std::lround(gray.pixels[i] * 255.0));
    EXPECT_EQ(rgb[3 * i], g);
    EXPECT_EQ(rgb[3 * i + 1], g);
    EXPECT_EQ(rgb[3 * i + 2], g);
  }
}

TEST(Overlay, PeakHandBlend) {
  data::ImageBuffer gray(1, 2);
  gray.pixels = {0.25f, 0.25f};
  const auto rgb = overlay_rgb(flat_heatmap(1, 2, {1.0f, 0.5f}), gray);
  // v = 1: red = green = 255·(0.4 + 0.6·0.25) = 140.25, blue = 255·0.15 = 38.25
  EXPECT_EQ(rgb[0], 140);
  EXPECT_EQ(rgb[1], 140);
  EXPECT_EQ(rgb[2], 38);
  // v = 0.5: weight 0.2; red 255·(0.8·0.25 + 0.2) = 102, green 255·(0.2 + 0.1) = 76.5, blue 51
  EXPECT_EQ(rgb[3], 102);
  EXPECT_EQ(rgb[4], 77);
  EXPECT_EQ(rgb[5], 51);
  EXPECT_THROW(overlay_rgb(flat_heatmap(1, 2, {1.0f, 0.5f}), data::ImageBuffer(2, 2)), GradCamError);
}

TEST(Overlay, FilesRoundTrip) {
  const auto dir = fresh_dir("files");
  std::vector<float> values(5 * 7);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i) / 34.0f;
  data::ImageBuffer gray(5, 7);
  std::ranges::fill(gray.pixels, 0.5f);
  const Heatmap h = flat_heatmap(5, 7, values);
  const OverlayPaths paths = render_overlay(h, gray, dir);
  EXPECT_EQ(paths.heatmap.filename(), "12.3.cam.pgm");
  EXPECT_EQ(paths.overlay.filename(), "12.3.overlay.ppm");
  const NetpbmImage pgm = read_netpbm(paths.heatmap);
  ASSERT_EQ(pgm.channels, 1u);
  ASSERT_EQ(pgm.height, 5u);
  ASSERT_EQ(pgm.width, 7u);
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_LE(std::abs(pgm.bytes[i] / 255.0 - values[i]), 1.0 / 255.0);
  const NetpbmImage ppm = read_netpbm(paths.overlay);
  EXPECT_EQ(ppm.channels, 3u);
  EXPECT_EQ(ppm.bytes, overlay_rgb(h, gray));
  EXPECT_THROW(read_netpbm(dir / "missing.pgm"), data::DataError);
}

}  // namespace
}  // namespace snr::explain
