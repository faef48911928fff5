#pragma once

#include <vector>

#include "snr/data/manifest.hpp"
#include "snr/data/synthetic.hpp"
#include "snr/data/transforms.hpp"

namespace snr::data {

// A decoded, preprocessed sample ready for the network.
struct Example {
  ImageId id;
  Label label = Label::kNoAppendicitis;
  TensorF input;  // 3×size×size
};

// Decodes and preprocesses records in order.
std::vector<Example> load_examples(const std::vector<SampleRecord>& records, std::size_t size);
std::vector<Example> to_examples(const std::vector<SynthImage>& images, std::size_t size);

// Stacks the selected examples into an N×3×size×size batch.
TensorF stack_inputs(const std::vector<const TensorF*>& inputs);

}  // namespace snr::data
