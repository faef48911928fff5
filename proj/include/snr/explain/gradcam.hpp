#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "snr/data/image.hpp"
#include "snr/data/synthetic.hpp"
#include "snr/model/network.hpp"

namespace snr::explain {

class GradCamError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Heatmap {
  std::size_t height = 0, width = 0;
  std::vector<float> values;  // row-major, in [0, 1], max 1 unless all zero
  // ReLU(Σ α_k A_k) on the feature grid, before upsampling and normalization.
  std::size_t raw_height = 0, raw_width = 0;
  std::vector<double> raw;
  std::string source_layer;
  data::ImageId input_ref;
  double predicted_score = 0.0;  // sigmoid output for the input

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  // Row-major index of the first maximum.
  std::size_t argmax() const;
};

struct GradCamOptions {
  std::string target_layer;     // empty selects the last conv of stage 4
  bool negative_class = false;  // differentiate −logit instead of logit
};

// ReLU(Σ_k α_k A_k) with α_k the spatial mean of ∂y/∂A_k, for a 1×K×h×w
// activation and its gradient.
std::vector<double> cam_from_gradients(const TensorF& activation, std::span<const float> gradient);

// Bilinear upsample to height×width followed by max-normalization; an all-zero
// map stays zero.
std::vector<float> upsample_and_normalize(const std::vector<double>& raw, std::size_t raw_height,
                                          std::size_t raw_width, std::size_t height, std::size_t width);

// Eval-mode Grad-CAM for one 3×S×S (or 1×3×S×S) input. Parameters do not
// receive gradients; the network's state is unchanged on return. Calls on the
// same network must not overlap.
Heatmap gradcam(model::Network<float>& net, const TensorF& input, const GradCamOptions& options = {},
                data::ImageId input_ref = {});

// Box grown by `margin` pixels on every side, clipped to the image.
data::Box dilate(const data::Box& box, std::size_t margin, std::size_t height, std::size_t width);

struct ProbeResult {
  std::size_t positives = 0;  // positive samples seen
  std::size_t evaluated = 0;  // correctly classified positives
  std::size_t hits = 0;
  double hit_rate() const { return evaluated == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(evaluated); }
};

// For each correctly classified positive, checks whether the heatmap argmax
// lies in its patch box dilated by 25% of the image width. Boxes are scaled
// from the synthetic image size to the network input size.
ProbeResult localization_probe(model::Network<float>& net, const std::vector<data::SynthImage>& images,
                               const GradCamOptions& options = {});

struct OverlayPaths {
  std::filesystem::path heatmap;  // <subject>.<view>.cam.pgm
  std::filesystem::path overlay;  // <subject>.<view>.overlay.ppm
};

inline constexpr double kOverlayAlpha = 0.4;

// Blends the red-to-yellow ramp (1, v, 0) over the gray image with weight
// kOverlayAlpha·v. `gray` must match the heatmap size.
std::vector<std::uint8_t> overlay_rgb(const Heatmap& heatmap, const data::ImageBuffer& gray);

OverlayPaths render_overlay(const Heatmap& heatmap, const data::ImageBuffer& gray, const std::filesystem::path& dir);

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<float>& values);
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

struct NetpbmImage {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

// Reads binary P5/P6 files with maxval 255.
NetpbmImage read_netpbm(const std::filesystem::path& path);

}  // namespace snr::explain
