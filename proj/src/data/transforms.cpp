#include "snr/data/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace snr::data {

ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t height, std::size_t width) {
  if (image.height == 0 || image.width == 0 || height == 0 || width == 0) {
    throw DataError(fmt::format("cannot resize {}x{} image to {}x{}", image.height, image.width, height, width));
  }
  ImageBuffer out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double max_y = static_cast<double>(image.height - 1), max_x = static_cast<double>(image.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = image.at(y0, x0) * (1 - wx) + image.at(y0, x1) * wx;
      const double bottom = image.at(y1, x0) * (1 - wx) + image.at(y1, x1) * wx;
      out.at(y, x) = static_cast<float>(top * (1 - wy) + bottom * wy);
    }
  }
  return out;
}

TensorF preprocess(const ImageBuffer& image, std::size_t size) {
  if (image.height < 2 || image.width < 2) {
    throw DataError(fmt::format("image of {}x{} pixels is too small to preprocess", image.height, image.width));
  }
  const ImageBuffer resized = resize_bilinear(image, size, size);
  double mean = 0.0;
  for (float v : resized.pixels) mean += v;
  mean /= static_cast<double>(resized.pixels.size());
  double var = 0.0;
  for (float v : resized.pixels) var += (v - mean) * (v - mean);
  var /= static_cast<double>(resized.pixels.size());
  const double std_dev = std::max(std::sqrt(var), 1e-6);

  const std::size_t plane = size * size;
  std::vector<float> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const float z = static_cast<float>((resized.pixels[i] - mean) / std_dev);
    out[i] = out[plane + i] = out[2 * plane + i] = z;
  }
  return TensorF(Shape{3, size, size}, std::move(out));
}

void AugmentConfig::validate() const {
  if (!(rotation_degrees >= 0.0)) throw DataError("rotation_degrees must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw DataError("flip_probability must lie in [0, 1]");
  if (!(contrast_lo <= contrast_hi)) throw DataError("contrast range must satisfy lo <= hi");
  if (!(noise_sigma_max >= 0.0)) throw DataError("noise_sigma_max must be >= 0");
}

AugmentConfig AugmentConfig::disabled(std::uint64_t seed) {
  AugmentConfig cfg;
  cfg.rotation_degrees = 0.0;
  cfg.flip_probability = 0.0;
  cfg.contrast_lo = cfg.contrast_hi = 1.0;
  cfg.noise_sigma_max = 0.0;
  cfg.seed = seed;
  return cfg;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) {
    rng.discard(1);  // keep the stream position independent of the range
    return lo;
  }
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void check_chw(const TensorF& t) {
  if (t.rank() != 3) throw ShapeError("expected a C×H×W tensor, got " + shape_to_string(t.shape()));
}

}  // namespace

AugmentDraw draw_augmentation(const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t index) {
  cfg.validate();
  auto lo32 = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi32 = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo32(cfg.seed), hi32(cfg.seed), lo32(epoch), hi32(epoch), lo32(index), hi32(index)};
  std::mt19937_64 rng(seq);
  AugmentDraw d;
  d.angle_degrees = uniform(rng, -cfg.rotation_degrees, cfg.rotation_degrees);
  d.flip = uniform(rng, 0.0, 1.0) < cfg.flip_probability;
  d.contrast = uniform(rng, cfg.contrast_lo, cfg.contrast_hi);
  d.noise_sigma = uniform(rng, 0.0, cfg.noise_sigma_max);
  d.noise_seed = rng();
  return d;
}

TensorF rotate(const TensorF& t, double degrees) {
  check_chw(t);
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  const auto src = t.data();
  std::vector<float> out(t.size(), 0.0f);
  auto sample = [&](std::size_t ch, long y, long x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return src[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      // inverse map: the output pixel reads from the source rotated back by theta
      const double xs = cx + cs * dx - sn * dy;
      const double ys = cy + sn * dx + cs * dy;
      const double fx = std::floor(xs), fy = std::floor(ys);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double wx = xs - fx, wy = ys - fy;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = (sample(ch, y0, x0) * (1 - wx) + sample(ch, y0, x0 + 1) * wx) * (1 - wy) +
                         (sample(ch, y0 + 1, x0) * (1 - wx) + sample(ch, y0 + 1, x0 + 1) * wx) * wy;
        out[(ch * h + y) * w + x] = static_cast<float>(v);
      }
    }
  }
  return TensorF(t.shape(), std::move(out));
}

TensorF flip_horizontal(const TensorF& t) {
  check_chw(t);
  const std::size_t rows = t.dim(0) * t.dim(1), w = t.dim(2);
  const auto src = t.data();
  std::vector<float> out(t.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = src[r * w + (w - 1 - x)];
  }
  return TensorF(t.shape(), std::move(out));
}

TensorF apply_augmentation(const TensorF& t, const AugmentDraw& draw) {
  check_chw(t);
  TensorF out = draw.angle_degrees != 0.0 ? rotate(t, draw.angle_degrees) : t.clone();
  if (draw.flip) out = flip_horizontal(out);
  auto v = out.mutable_data();
  if (draw.contrast != 1.0) {
    const float c = static_cast<float>(draw.contrast);
    for (float& x : v) x *= c;
  }
  if (draw.noise_sigma > 0.0) {
    const std::size_t plane = out.dim(1) * out.dim(2);
    std::mt19937_64 rng(draw.noise_seed);
    std::normal_distribution<double> noise(0.0, draw.noise_sigma);
    for (std::size_t i = 0; i < plane; ++i) {
      const float n = static_cast<float>(noise(rng));
      for (std::size_t ch = 0; ch < out.dim(0); ++ch) v[ch * plane + i] += n;
    }
  }
  return out;
}

TensorF augment(const TensorF& t, const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t index) {
  return apply_augmentation(t, draw_augmentation(cfg, epoch, index));
}

}  // namespace snr::data
