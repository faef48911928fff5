#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snr {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public TensorError {
 public:
  using TensorError::TensorError;
};

// Dense row-major array. A Tensor is a shared handle: copies alias the same
// storage, which is what lets a Tape refer back to the tensors it recorded.
// Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }
  static Tensor of(Shape shape, std::initializer_list<T> values) {
    return Tensor(std::move(shape), std::vector<T>(values));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl().data.size(); }

  std::span<const T> data() const { return impl().data; }
  std::span<T> mutable_data() { return impl().data; }
  const T* ptr() const { return impl().data.data(); }
  T* mutable_ptr() { return impl().data.data(); }
  T operator[](std::size_t i) const { return impl().data[i]; }

  // Value of a single-element tensor.
  T item() const;

  // 4-D accessor for NCHW tensors.
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  // Gradient state is mutable through const handles: values are fixed after
  // creation, gradients accumulate. Allocates a zeroed accumulator on first use.
  std::span<T> mutable_grad() const;
  void accumulate_grad(std::span<const T> delta) const;
  void zero_grad() const;
  void drop_grad() const { impl_mut().grad.clear(); }

  // Deep copy of the values; the copy does not require grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Impl& impl();
  const Impl& impl() const;
  Impl& impl_mut() const;

  std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Element-wise value conversion between precisions.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> out(src.size());
  auto in = src.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(in[i]);
  return Tensor<To>(src.shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace snr
