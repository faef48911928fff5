#include "snr/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace snr {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
typename Tensor<T>::Impl& Tensor<T>::impl() {
  if (!impl_) throw TensorError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
const typename Tensor<T>::Impl& Tensor<T>::impl() const {
  if (!impl_) throw TensorError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
typename Tensor<T>::Impl& Tensor<T>::impl_mut() const {
  if (!impl_) throw TensorError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape()));
  return impl().data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = shape();
  if (s.size() != 4) throw ShapeError("at(n,c,h,w) needs a 4-D tensor, got " + shape_to_string(s));
  return impl().data[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  Impl& im = impl_mut();
  if (im.grad.empty()) im.grad.assign(im.data.size(), T(0));
  return im.grad;
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> delta) const {
  std::span<T> g = mutable_grad();
  if (delta.size() != g.size()) throw ShapeError("gradient size mismatch for shape " + shape_to_string(shape()));
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
void Tensor<T>::zero_grad() const {
  Impl& im = impl_mut();
  if (!im.grad.empty()) std::fill(im.grad.begin(), im.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor<T>(shape(), impl().data);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace snr
