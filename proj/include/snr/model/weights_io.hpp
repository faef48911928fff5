#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "snr/model/network.hpp"

// Binary weights file:
//   "SNRW" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//               f32 payload (little-endian IEEE-754)
//   | u32 CRC-32 of every preceding byte
namespace snr::model {

inline constexpr char kWeightsMagic[4] = {'S', 'N', 'R', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

class WeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class WeightsMagicError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
class WeightsVersionError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
class WeightsChecksumError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
class WeightsTruncatedError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};
// Thrown when a tensor is missing, unexpected, or has a different shape; the
// message and tensor() name the offending tensor.
class WeightsShapeError : public WeightsError {
 public:
  WeightsShapeError(std::string tensor, const std::string& what) : WeightsError(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_weights(const std::vector<NamedArray>& tensors);
std::vector<NamedArray> decode_weights(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_weights(const Network<T>& net, const std::filesystem::path& path);

// Overwrites every parameter and running statistic of `net`. The file must
// hold exactly the network's tensors with matching shapes; `net` is left
// untouched when validation fails.
template <typename T>
void load_weights(const std::filesystem::path& path, Network<T>& net);

}  // namespace snr::model
