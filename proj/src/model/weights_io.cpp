#include "snr/model/weights_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace snr::model {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) throw WeightsTruncatedError(std::string("weights file truncated while reading ") + what);
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<NamedArray>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kWeightsMagic), std::end(kWeightsMagic));
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedArray& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(out, d);
    for (float v : t.values) put_f32(out, v);
  }
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

std::vector<NamedArray> decode_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw WeightsMagicError("not a weights file: missing SNRW magic bytes");
  }
  if (bytes.size() < 16) throw WeightsTruncatedError("weights file truncated in header");
  Reader header(bytes.data() + 4, 4);
  const std::uint32_t version = header.u32("version");
  if (version != kWeightsVersion) {
    throw WeightsVersionError("unsupported weights format version " + std::to_string(version) + " (expected " +
                              std::to_string(kWeightsVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  Reader trailer(bytes.data() + body, 4);
  const std::uint32_t stored = trailer.u32("checksum");
  const std::uint32_t actual = crc32_of(bytes.data(), body);
  if (stored != actual) throw WeightsChecksumError("weights file checksum mismatch (file is corrupt)");

  Reader r(bytes.data() + 8, body - 8);
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray t;
    const std::uint32_t name_len = r.u32("name length");
    t.name = r.text(name_len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32("dimension"));
      n *= t.dims.back();
    }
    t.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) t.values.push_back(r.f32("payload"));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw WeightsTruncatedError("weights file has trailing bytes after the last tensor");
  return out;
}

template <typename T>
void save_weights(const Network<T>& net, const std::filesystem::path& path) {
  std::vector<NamedArray> tensors;
  for (const auto& [name, t] : net.state()) {
    NamedArray a;
    a.name = name;
    for (std::size_t d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
    for (T v : t.data()) a.values.push_back(static_cast<float>(v));
    tensors.push_back(std::move(a));
  }
  const std::vector<std::uint8_t> bytes = encode_weights(tensors);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightsError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw WeightsError("failed writing " + path.string());
}

template <typename T>
void load_weights(const std::filesystem::path& path, Network<T>& net) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightsError("cannot open weights file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::vector<NamedArray> tensors = decode_weights(bytes);

  std::map<std::string, const NamedArray*> by_name;
  for (const NamedArray& t : tensors) by_name[t.name] = &t;
  auto state = net.state();
  for (const auto& [name, t] : state) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw WeightsShapeError(name, "weights file has no tensor '" + name + "'");
    Shape file_shape(it->second->dims.begin(), it->second->dims.end());
    if (file_shape != t.shape()) {
      throw WeightsShapeError(name, "shape mismatch for tensor '" + name + "': file " + shape_to_string(file_shape) +
                                        ", network " + shape_to_string(t.shape()));
    }
  }
  if (by_name.size() != state.size()) {
    for (const NamedArray& t : tensors) {
      bool known = false;
      for (const auto& entry : state) known = known || entry.first == t.name;
      if (!known) throw WeightsShapeError(t.name, "weights file has unexpected tensor '" + t.name + "'");
    }
  }
  for (auto& [name, t] : state) {
    const NamedArray& src = *by_name.at(name);
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.values[i]);
  }
}

template void save_weights(const Network<float>&, const std::filesystem::path&);
template void save_weights(const Network<double>&, const std::filesystem::path&);
template void load_weights(const std::filesystem::path&, Network<float>&);
template void load_weights(const std::filesystem::path&, Network<double>&);

}  // namespace snr::model
