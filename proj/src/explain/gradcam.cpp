#include "snr/explain/gradcam.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string_view>

#include <fmt/format.h>

#include "snr/data/dataset.hpp"
#include "snr/data/transforms.hpp"

namespace snr::explain {

namespace {

// Switches requires_grad off on every parameter for the guard's lifetime so a
// Grad-CAM pass records only what depends on the captured activation.
class ParameterGradGuard {
 public:
  explicit ParameterGradGuard(model::Network<float>& net) : net_(net) {
    for (auto& p : net_.parameters()) {
      saved_.push_back(p.value.requires_grad());
      p.value.set_requires_grad(false);
    }
  }
  ~ParameterGradGuard() {
    auto& params = net_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value.set_requires_grad(saved_[i]);
  }
  ParameterGradGuard(const ParameterGradGuard&) = delete;
  ParameterGradGuard& operator=(const ParameterGradGuard&) = delete;

 private:
  model::Network<float>& net_;
  std::vector<bool> saved_;
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_netpbm(const std::filesystem::path& path, std::string_view magic, std::size_t height, std::size_t width,
                  const std::vector<std::uint8_t>& pixels) {
  const std::string header = fmt::format("{}\n{} {}\n255\n", magic, width, height);
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  data::write_file(path, bytes);
}

}  // namespace

std::size_t Heatmap::argmax() const {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> cam_from_gradients(const TensorF& activation, std::span<const float> gradient) {
  if (activation.rank() != 4 || activation.dim(0) != 1 || gradient.size() != activation.size()) {
    throw GradCamError("Grad-CAM needs a 1×K×h×w activation with a gradient of the same size, got " +
                       shape_to_string(activation.shape()));
  }
  const std::size_t k = activation.dim(1), hw = activation.dim(2) * activation.dim(3);
  const auto a = activation.data();
  std::vector<double> cam(hw, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < hw; ++i) alpha += gradient[c * hw + i];
    alpha /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) cam[i] += alpha * a[c * hw + i];
  }
  for (double& v : cam) v = std::max(v, 0.0);
  return cam;
}

std::vector<float> upsample_and_normalize(const std::vector<double>& raw, std::size_t raw_height,
                                          std::size_t raw_width, std::size_t height, std::size_t width) {
  if (raw.size() != raw_height * raw_width) throw GradCamError("raw map size does not match its grid");
  data::ImageBuffer small(raw_height, raw_width);
  for (std::size_t i = 0; i < raw.size(); ++i) small.pixels[i] = static_cast<float>(raw[i]);
  data::ImageBuffer big = data::resize_bilinear(small, height, width);
  const float peak = *std::max_element(big.pixels.begin(), big.pixels.end());
  if (peak > 0.0f) {
    for (float& v : big.pixels) v = std::clamp(v / peak, 0.0f, 1.0f);
  } else {
    std::fill(big.pixels.begin(), big.pixels.end(), 0.0f);
  }
  return std::move(big.pixels);
}

Heatmap gradcam(model::Network<float>& net, const TensorF& input, const GradCamOptions& options,
                data::ImageId input_ref) {
  const std::string layer = options.target_layer.empty() ? net.last_conv_name() : options.target_layer;
  const auto names = net.activation_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    throw GradCamError("unknown Grad-CAM target layer '" + layer + "'");
  }
  TensorF batch = input.rank() == 3 ? TensorF(Shape{1, input.dim(0), input.dim(1), input.dim(2)},
                                              std::vector<float>(input.data().begin(), input.data().end()))
                                    : input;
  if (batch.rank() != 4 || batch.dim(0) != 1) {
    throw GradCamError("Grad-CAM takes one input, got " + shape_to_string(input.shape()));
  }

  ParameterGradGuard guard(net);
  Tape<float> tape;
  model::ForwardContext<float> ctx;
  ctx.mode = model::Mode::kEval;
  ctx.tape = &tape;
  ctx.capture = layer;
  ctx.capture_as_leaf = true;
  const auto out = net.forward(batch, ctx);
  const TensorF& activation = out.captured;
  if (!activation.defined() || activation.rank() != 4) {
    throw GradCamError("layer '" + layer + "' does not produce a spatial activation");
  }

  Heatmap h;
  h.source_layer = layer;
  h.input_ref = input_ref;
  h.predicted_score = out.probabilities.item();
  h.height = batch.dim(2);
  h.width = batch.dim(3);
  h.raw_height = activation.dim(2);
  h.raw_width = activation.dim(3);

  const TensorF target = options.negative_class ? ops::scale(out.logits, -1.0f, &tape) : out.logits;
  std::vector<float> gradient(activation.size(), 0.0f);
  if (tape.contains(target)) {
    tape.backward(target);
    if (activation.has_grad()) gradient.assign(activation.grad().begin(), activation.grad().end());
  }
  activation.drop_grad();
  h.raw = cam_from_gradients(activation, gradient);
  h.values = upsample_and_normalize(h.raw, h.raw_height, h.raw_width, h.height, h.width);
  return h;
}

data::Box dilate(const data::Box& box, std::size_t margin, std::size_t height, std::size_t width) {
  data::Box d;
  d.y0 = box.y0 > margin ? box.y0 - margin : 0;
  d.x0 = box.x0 > margin ? box.x0 - margin : 0;
  d.y1 = std::min(box.y1 + margin, height);
  d.x1 = std::min(box.x1 + margin, width);
  return d;
}

ProbeResult localization_probe(model::Network<float>& net, const std::vector<data::SynthImage>& images,
                               const GradCamOptions& options) {
  const std::size_t size = static_cast<std::size_t>(net.config().input_size);
  const std::size_t margin = static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(size)));
  ProbeResult r;
  for (const data::SynthImage& im : images) {
    if (im.label != data::Label::kAppendicitis) continue;
    ++r.positives;
    const TensorF input = data::preprocess(im.image, size);
    const Heatmap h = gradcam(net, input, options, im.id);
    if (h.predicted_score < 0.5) continue;
    ++r.evaluated;
    const double sy = static_cast<double>(size) / static_cast<double>(im.image.height);
    const double sx = static_cast<double>(size) / static_cast<double>(im.image.width);
    data::Box box;
    box.y0 = static_cast<std::size_t>(std::floor(static_cast<double>(im.patch.y0) * sy));
    box.x0 = static_cast<std::size_t>(std::floor(static_cast<double>(im.patch.x0) * sx));
    box.y1 = static_cast<std::size_t>(std::ceil(static_cast<double>(im.patch.y1) * sy));
    box.x1 = static_cast<std::size_t>(std::ceil(static_cast<double>(im.patch.x1) * sx));
    const data::Box grown = dilate(box, margin, size, size);
    const std::size_t peak = h.argmax(), y = peak / h.width, x = peak % h.width;
    r.hits += y >= grown.y0 && y < grown.y1 && x >= grown.x0 && x < grown.x1;
  }
  return r;
}

std::vector<std::uint8_t> overlay_rgb(const Heatmap& heatmap, const data::ImageBuffer& gray) {
  if (gray.height != heatmap.height || gray.width != heatmap.width) {
    throw GradCamError(fmt::format("overlay needs a {}x{} image, got {}x{}", heatmap.height, heatmap.width,
                                   gray.height, gray.width));
  }
  std::vector<std::uint8_t> rgb(heatmap.values.size() * 3);
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) {
    const double v = heatmap.values[i], g = std::clamp(static_cast<double>(gray.pixels[i]), 0.0, 1.0);
    const double w = kOverlayAlpha * v;
    rgb[3 * i + 0] = to_byte((1.0 - w) * g + w);
    rgb[3 * i + 1] = to_byte((1.0 - w) * g + w * v);
    rgb[3 * i + 2] = to_byte((1.0 - w) * g);
  }
  return rgb;
}

OverlayPaths render_overlay(const Heatmap& heatmap, const data::ImageBuffer& gray, const std::filesystem::path& dir) {
  const std::string stem = fmt::format("{}.{}", heatmap.input_ref.subject_id, heatmap.input_ref.view_index);
  OverlayPaths paths{dir / (stem + ".cam.pgm"), dir / (stem + ".overlay.ppm")};
  const auto rgb = overlay_rgb(heatmap, gray);
  write_pgm(paths.heatmap, heatmap.height, heatmap.width, heatmap.values);
  write_ppm(paths.overlay, heatmap.height, heatmap.width, rgb);
  return paths;
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<float>& values) {
  if (values.size() != height * width) throw GradCamError("PGM pixel count does not match its size");
  std::vector<std::uint8_t> bytes(values.size());
  std::transform(values.begin(), values.end(), bytes.begin(), [](float v) { return to_byte(v); });
  write_netpbm(path, "P5", height, width, bytes);
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) throw GradCamError("PPM byte count does not match its size");
  write_netpbm(path, "P6", height, width, rgb);
}

NetpbmImage read_netpbm(const std::filesystem::path& path) {
  const auto bytes = data::read_file(path);
  std::size_t pos = 0;
  // Whitespace-separated header tokens; '#' comments run to end of line.
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    return t;
  };
  NetpbmImage img;
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw data::CorruptFileError(path.string() + ": not a binary PGM/PPM file");
  img.channels = magic == "P5" ? 1 : 3;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (token() != "255") throw data::CorruptFileError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw data::CorruptFileError(path.string() + ": malformed header");
  }
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = img.height * img.width * img.channels;
  if (bytes.size() < pos + n) throw data::CorruptFileError(path.string() + ": truncated raster");
  img.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

}  // namespace snr::explain
