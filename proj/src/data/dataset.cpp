#include "snr/data/dataset.hpp"

#include <algorithm>

namespace snr::data {

std::vector<Example> load_examples(const std::vector<SampleRecord>& records, std::size_t size) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const SampleRecord& r : records) {
    out.push_back({{r.subject_id, r.view_index}, r.label, preprocess(decode_bmp(std::filesystem::path(r.path)), size)});
  }
  return out;
}

std::vector<Example> to_examples(const std::vector<SynthImage>& images, std::size_t size) {
  std::vector<Example> out;
  out.reserve(images.size());
  for (const SynthImage& im : images) out.push_back({im.id, im.label, preprocess(im.image, size)});
  return out;
}

TensorF stack_inputs(const std::vector<const TensorF*>& inputs) {
  if (inputs.empty()) throw DataError("cannot stack an empty batch");
  const Shape& s = inputs.front()->shape();
  Shape shape{inputs.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  std::vector<float> values;
  values.reserve(numel(shape));
  for (const TensorF* t : inputs) {
    if (t->shape() != s) {
      throw ShapeError("cannot stack " + shape_to_string(t->shape()) + " with " + shape_to_string(s));
    }
    values.insert(values.end(), t->data().begin(), t->data().end());
  }
  return TensorF(std::move(shape), std::move(values));
}

}  // namespace snr::data
