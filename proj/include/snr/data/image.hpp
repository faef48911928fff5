#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace snr::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedNameError : public DataError {
 public:
  explicit MalformedNameError(std::string name)
      : DataError("malformed image filename '" + name + "' (expected <subject>.<view>.bmp)"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnsupportedFormatError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

// Grayscale image, row-major, intensities in [0, 1].
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

struct ImageId {
  int subject_id = 0;
  int view_index = 0;
  auto operator<=>(const ImageId&) const = default;
};

// "<subject>.<view>.bmp", extension matched case-insensitively.
ImageId parse_filename(const std::string& name);
std::string image_filename(ImageId id);

// Uncompressed 8-bit palette or 24-bit BMP. Colour pixels are reduced to
// luminance 0.299 R + 0.587 G + 0.114 B.
ImageBuffer decode_bmp(const std::vector<std::uint8_t>& bytes);
ImageBuffer decode_bmp(const std::filesystem::path& path);

// 8-bit grayscale-palette BMP, bottom-up rows. Values are rounded to 1/255.
std::vector<std::uint8_t> encode_bmp(const ImageBuffer& image);
void write_bmp(const ImageBuffer& image, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace snr::data
