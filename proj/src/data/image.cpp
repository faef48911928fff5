#include "snr/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <regex>

#include <fmt/format.h>

namespace snr::data {

ImageId parse_filename(const std::string& name) {
  static const std::regex pattern(R"(^(\d+)\.(\d+)\.[bB][mM][pP]$)");
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) throw MalformedNameError(name);
  ImageId id;
  try {
    id.subject_id = std::stoi(m[1].str());
    id.view_index = std::stoi(m[2].str());
  } catch (const std::out_of_range&) {
    throw MalformedNameError(name);
  }
  if (id.view_index < 1) throw MalformedNameError(name);
  return id;
}

std::string image_filename(ImageId id) { return fmt::format("{}.{}.bmp", id.subject_id, id.view_index); }

namespace {

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t offset, std::size_t n) const {
    if (offset + n > bytes_.size() || offset + n < offset) {
      throw CorruptFileError(fmt::format("BMP truncated: need {} bytes at offset {}, file has {}", n, offset,
                                         bytes_.size()));
    }
  }
  std::uint16_t u16(std::size_t at) const {
    need(at, 2);
    return static_cast<std::uint16_t>(bytes_[at] | bytes_[at + 1] << 8);
  }
  std::uint32_t u32(std::size_t at) const {
    need(at, 4);
    return static_cast<std::uint32_t>(bytes_[at]) | static_cast<std::uint32_t>(bytes_[at + 1]) << 8 |
           static_cast<std::uint32_t>(bytes_[at + 2]) << 16 | static_cast<std::uint32_t>(bytes_[at + 3]) << 24;
  }
  std::int32_t i32(std::size_t at) const { return static_cast<std::int32_t>(u32(at)); }
  std::uint8_t u8(std::size_t at) const {
    need(at, 1);
    return bytes_[at];
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
};

float luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<float>((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

ImageBuffer decode_bmp(const std::vector<std::uint8_t>& bytes) {
  const Reader r(bytes);
  r.need(0, 14);
  if (bytes[0] != 'B' || bytes[1] != 'M') throw UnsupportedFormatError("not a BMP file (missing 'BM' signature)");
  const std::uint32_t pixel_offset = r.u32(10);
  const std::uint32_t dib_size = r.u32(14);
  if (dib_size < 40) throw UnsupportedFormatError(fmt::format("unsupported BMP header size {}", dib_size));
  const std::int32_t width = r.i32(18);
  const std::int32_t raw_height = r.i32(22);
  const std::uint16_t bpp = r.u16(28);
  const std::uint32_t compression = r.u32(30);
  std::uint32_t colors_used = r.u32(46);

  if (compression != 0) {
    throw UnsupportedFormatError(fmt::format("compressed BMP (compression type {}) is not supported", compression));
  }
  if (bpp != 8 && bpp != 24) throw UnsupportedFormatError(fmt::format("{}-bit BMP is not supported", bpp));
  if (width <= 0 || raw_height == 0) throw CorruptFileError(fmt::format("BMP has invalid size {}x{}", width, raw_height));

  const bool top_down = raw_height < 0;
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(std::abs(static_cast<long long>(raw_height)));
  const std::size_t stride = (bpp * w + 31) / 32 * 4;

  std::vector<float> palette;
  if (bpp == 8) {
    if (colors_used == 0) colors_used = 256;
    if (colors_used > 256) throw CorruptFileError(fmt::format("BMP palette claims {} colours", colors_used));
    const std::size_t pal_at = 14 + dib_size;
    r.need(pal_at, 4 * colors_used);
    for (std::uint32_t i = 0; i < colors_used; ++i) {
      const std::size_t e = pal_at + 4 * i;
      palette.push_back(luminance(bytes[e + 2], bytes[e + 1], bytes[e]));
    }
  }
  r.need(pixel_offset, stride * h);

  ImageBuffer img(h, w);
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t y = top_down ? row : h - 1 - row;
    const std::uint8_t* src = bytes.data() + pixel_offset + row * stride;
    for (std::size_t x = 0; x < w; ++x) {
      if (bpp == 8) {
        const std::uint8_t index = src[x];
        if (index >= palette.size()) {
          throw CorruptFileError(fmt::format("BMP pixel references palette entry {} of {}", index, palette.size()));
        }
        img.at(y, x) = palette[index];
      } else {
        img.at(y, x) = luminance(src[3 * x + 2], src[3 * x + 1], src[3 * x]);
      }
    }
  }
  return img;
}

ImageBuffer decode_bmp(const std::filesystem::path& path) {
  try {
    return decode_bmp(read_file(path));
  } catch (const UnsupportedFormatError& e) {
    throw UnsupportedFormatError(path.string() + ": " + e.what());
  } catch (const CorruptFileError& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_bmp(const ImageBuffer& image) {
  const std::size_t stride = (image.width + 3) / 4 * 4;
  const std::uint32_t pixel_offset = 14 + 40 + 256 * 4;
  const std::uint32_t file_size = pixel_offset + static_cast<std::uint32_t>(stride * image.height);
  std::vector<std::uint8_t> out;
  out.reserve(file_size);
  out.push_back('B');
  out.push_back('M');
  put_u32(out, file_size);
  put_u32(out, 0);
  put_u32(out, pixel_offset);
  put_u32(out, 40);
  put_u32(out, static_cast<std::uint32_t>(image.width));
  put_u32(out, static_cast<std::uint32_t>(image.height));
  put_u16(out, 1);
  put_u16(out, 8);
  put_u32(out, 0);
  put_u32(out, static_cast<std::uint32_t>(stride * image.height));
  put_u32(out, 2835);
  put_u32(out, 2835);
  put_u32(out, 256);
  put_u32(out, 0);
  for (int i = 0; i < 256; ++i) {
    const auto v = static_cast<std::uint8_t>(i);
    out.insert(out.end(), {v, v, v, 0});
  }
  for (std::size_t row = 0; row < image.height; ++row) {
    const std::size_t y = image.height - 1 - row;
    for (std::size_t x = 0; x < image.width; ++x) {
      const float v = std::clamp(image.at(y, x), 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
    out.insert(out.end(), stride - image.width, 0);
  }
  return out;
}

void write_bmp(const ImageBuffer& image, const std::filesystem::path& path) { write_file(path, encode_bmp(image)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace snr::data
