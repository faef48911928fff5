#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "snr/data/image.hpp"
#include "snr/data/manifest.hpp"

// Synthetic stand-ins for ultrasound data so every workflow runs without the
// real dataset.
namespace snr::data {

// Half-open pixel rectangle [y0, y1) × [x0, x1).
struct Box {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool empty() const { return y1 <= y0 || x1 <= x0; }
};

struct SynthImage {
  ImageId id;
  Label label = Label::kNoAppendicitis;
  ImageBuffer image;
  Box patch;  // discriminative patch; empty for negatives
};

struct SynthConfig {
  int subjects = 40;
  double positive_fraction = 0.5;
  int min_views = 1;
  int max_views = 3;
  std::size_t image_size = 64;
  double patch_fraction = 0.25;  // patch side as a fraction of the image side
  std::uint64_t seed = 0;

  void validate() const;
};

// Speckled background with a bright patch at a random location in every
// image; the patch is striped for positives and flat for negatives.
std::vector<SynthImage> planted_patch_set(const SynthConfig& cfg);

// n_per_class images with a bright square (positive) or a dark square
// (negative) on a mid-gray speckled background; one view per subject.
std::vector<SynthImage> bright_dark_squares(int n_per_class, std::size_t size, std::uint64_t seed);

struct SynthSummary {
  std::filesystem::path image_dir;
  std::filesystem::path labels_csv;
  std::size_t subjects = 0;
  std::size_t images = 0;
  std::size_t positives = 0;
};

// Writes <root>/US_Pictures/<subject>.<view>.bmp, <root>/labels.csv, and
// <root>/patches.csv (subject_id,view_index,y0,x0,y1,x1 for positives).
SynthSummary write_synthetic_dataset(const std::vector<SynthImage>& images, const std::filesystem::path& root);

}  // namespace snr::data
