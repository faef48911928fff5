#pragma once

#include <cstdint>

#include "snr/data/image.hpp"
#include "snr/tensor.hpp"

namespace snr::data {

inline constexpr std::size_t kDefaultImageSize = 224;

// Bilinear resampling with half-pixel centres; edges are clamped.
ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t height, std::size_t width);

// Resize to size×size, standardize to zero mean and unit population standard
// deviation (std clamped at 1e-6), and replicate into 3 channels.
TensorF preprocess(const ImageBuffer& image, std::size_t size = kDefaultImageSize);

struct AugmentConfig {
  double rotation_degrees = 10.0;
  double flip_probability = 0.5;
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;
  double noise_sigma_max = 0.05;
  std::uint64_t seed = 0;

  void validate() const;  // throws DataError
  static AugmentConfig disabled(std::uint64_t seed = 0);
};

// The random choices for one sample; a pure function of (cfg.seed, epoch, index).
struct AugmentDraw {
  double angle_degrees = 0.0;
  bool flip = false;
  double contrast = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

AugmentDraw draw_augmentation(const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t index);

// Rotates every channel of a C×H×W tensor by `degrees` (counter-clockwise)
// about the image centre with bilinear sampling; samples that fall outside
// the image read as 0.
TensorF rotate(const TensorF& t, double degrees);
TensorF flip_horizontal(const TensorF& t);

// rotation -> horizontal flip -> contrast (t·c) -> additive Gaussian noise.
// The noise field is shared across channels so replicated channels stay equal.
TensorF apply_augmentation(const TensorF& t, const AugmentDraw& draw);
TensorF augment(const TensorF& t, const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t index);

}  // namespace snr::data
