#include "snr/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace snr::data {

void SynthConfig::validate() const {
  if (subjects < 2) throw DataError("synthetic set needs at least 2 subjects");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) throw DataError("positive_fraction must lie in (0, 1)");
  if (min_views < 1 || max_views < min_views || max_views > 15) throw DataError("views must satisfy 1 <= min <= max <= 15");
  if (image_size < 8) throw DataError("synthetic images must be at least 8 pixels wide");
  if (!(patch_fraction > 0.0 && patch_fraction <= 1.0)) throw DataError("patch_fraction must lie in (0, 1]");
}

namespace {

// Low-frequency shading plus per-pixel speckle around `level`.
ImageBuffer speckle_background(std::size_t size, double level, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fy = 1.0 + 2.0 * u(rng), fx = 1.0 + 2.0 * u(rng);
  const double py = 2 * std::numbers::pi * u(rng), px = 2 * std::numbers::pi * u(rng);
  ImageBuffer img(size, size);
  const double n = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double shade = 0.05 * std::sin(2 * std::numbers::pi * fy * static_cast<double>(y) / n + py) *
                           std::cos(2 * std::numbers::pi * fx * static_cast<double>(x) / n + px);
      const double speckle = 0.08 * (u(rng) - 0.5);
      img.at(y, x) = static_cast<float>(std::clamp(level + shade + speckle, 0.0, 1.0));
    }
  }
  return img;
}

Box random_box(std::size_t size, std::size_t side, std::mt19937_64& rng) {
  side = std::clamp<std::size_t>(side, 1, size);
  std::uniform_int_distribution<std::size_t> pos(0, size - side);
  Box b;
  b.y0 = pos(rng);
  b.x0 = pos(rng);
  b.y1 = b.y0 + side;
  b.x1 = b.x0 + side;
  return b;
}

}  // namespace

std::vector<SynthImage> planted_patch_set(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const int n_pos = std::clamp(static_cast<int>(std::lround(cfg.subjects * cfg.positive_fraction)), 1,
                               cfg.subjects - 1);
  std::vector<Label> labels(static_cast<std::size_t>(cfg.subjects), Label::kNoAppendicitis);
  std::fill_n(labels.begin(), n_pos, Label::kAppendicitis);
  std::shuffle(labels.begin(), labels.end(), rng);

  const std::size_t side = static_cast<std::size_t>(std::lround(cfg.patch_fraction * static_cast<double>(cfg.image_size)));
  std::uniform_int_distribution<int> views(cfg.min_views, cfg.max_views);
  std::vector<SynthImage> out;
  for (int s = 0; s < cfg.subjects; ++s) {
    const int n_views = views(rng);
    for (int v = 1; v <= n_views; ++v) {
      SynthImage im;
      im.id = {s + 1, v};
      im.label = labels[static_cast<std::size_t>(s)];
      im.image = speckle_background(cfg.image_size, 0.35, rng);
      // Both classes carry a bright patch of the same mean so that whole-image
      // statistics do not separate them; only positives are striped.
      const Box box = random_box(cfg.image_size, side, rng);
      const bool striped = im.label == Label::kAppendicitis;
      const double period = std::max(2.0, static_cast<double>(side) / 4.0);
      for (std::size_t y = box.y0; y < box.y1; ++y) {
        for (std::size_t x = box.x0; x < box.x1; ++x) {
          const double stripe =
              striped ? 0.1 * std::sin(2 * std::numbers::pi * static_cast<double>(y + x) / period) : 0.0;
          im.image.at(y, x) = static_cast<float>(std::clamp(0.8 + stripe, 0.0, 1.0));
        }
      }
      if (striped) im.patch = box;
      out.push_back(std::move(im));
    }
  }
  return out;
}

std::vector<SynthImage> bright_dark_squares(int n_per_class, std::size_t size, std::uint64_t seed) {
  if (n_per_class < 1 || size < 8) throw DataError("bright/dark square set needs n >= 1 and size >= 8");
  std::mt19937_64 rng(seed);
  std::vector<SynthImage> out;
  for (int i = 0; i < 2 * n_per_class; ++i) {
    SynthImage im;
    im.id = {i + 1, 1};
    im.label = i % 2 == 0 ? Label::kAppendicitis : Label::kNoAppendicitis;
    im.image = speckle_background(size, 0.5, rng);
    const Box box = random_box(size, size / 4, rng);
    const float fill = im.label == Label::kAppendicitis ? 0.95f : 0.05f;
    for (std::size_t y = box.y0; y < box.y1; ++y)
      for (std::size_t x = box.x0; x < box.x1; ++x) im.image.at(y, x) = fill;
    if (im.label == Label::kAppendicitis) im.patch = box;
    out.push_back(std::move(im));
  }
  return out;
}

SynthSummary write_synthetic_dataset(const std::vector<SynthImage>& images, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  SynthSummary summary;
  summary.image_dir = root / "US_Pictures";
  summary.labels_csv = root / "labels.csv";
  fs::create_directories(summary.image_dir);

  std::map<int, Label> subjects;
  std::ofstream patches(root / "patches.csv");
  patches << "subject_id,view_index,y0,x0,y1,x1\n";
  for (const SynthImage& im : images) {
    write_bmp(im.image, summary.image_dir / image_filename(im.id));
    subjects[im.id.subject_id] = im.label;
    if (!im.patch.empty()) {
      patches << fmt::format("{},{},{},{},{},{}\n", im.id.subject_id, im.id.view_index, im.patch.y0, im.patch.x0,
                             im.patch.y1, im.patch.x1);
      ++summary.positives;
    }
  }
  std::ofstream csv(summary.labels_csv);
  csv << "subject_id,diagnosis\n";
  for (const auto& [id, label] : subjects) csv << id << ',' << to_string(label) << '\n';
  if (!csv || !patches) throw DataError("cannot write synthetic dataset under " + root.string());
  summary.subjects = subjects.size();
  summary.images = images.size();
  return summary;
}

}  // namespace snr::data
