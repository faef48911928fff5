#include "snr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gemm.hpp"

namespace snr::ops {

std::string_view to_string(Elementwise kind) {
  switch (kind) {
    case Elementwise::kAdd: return "add";
    case Elementwise::kSub: return "sub";
    case Elementwise::kMul: return "mul";
    case Elementwise::kRelu: return "relu";
    case Elementwise::kSigmoid: return "sigmoid";
    case Elementwise::kScale: return "scale";
  }
  return "unknown";
}

namespace {

// How `b` lines up against `a` in a binary op.
struct Broadcast {
  enum class Kind { kSame, kScalar, kChannel } kind = Kind::kSame;
  std::size_t channels = 1;
  std::size_t inner = 1;  // elements per channel per sample

  std::size_t index(std::size_t i) const {
    switch (kind) {
      case Kind::kSame: return i;
      case Kind::kScalar: return 0;
      case Kind::kChannel: return (i / inner) % channels;
    }
    return i;
  }
};

bool is_channel_vector(const Shape& b, std::size_t channels) {
  std::size_t non_unit = 0;
  std::size_t extent = 1;
  for (std::size_t d : b) {
    if (d != 1) {
      ++non_unit;
      extent = d;
    }
  }
  return non_unit <= 1 && extent == channels;
}

template <typename T>
Broadcast resolve_broadcast(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  Broadcast bc;
  if (a.shape() == b.shape()) return bc;
  if (b.size() == 1) {
    bc.kind = Broadcast::Kind::kScalar;
    return bc;
  }
  if (a.rank() >= 2 && is_channel_vector(b.shape(), a.dim(1))) {
    bc.kind = Broadcast::Kind::kChannel;
    bc.channels = a.dim(1);
    bc.inner = 1;
    for (std::size_t i = 2; i < a.rank(); ++i) bc.inner *= a.dim(i);
    return bc;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(b.shape()) + " onto " +
                   shape_to_string(a.shape()));
}

// Sums a full-size gradient down to b's layout.
template <typename T>
std::vector<T> reduce_to(const Broadcast& bc, std::span<const T> full, std::size_t b_size) {
  std::vector<T> out(b_size, T(0));
  for (std::size_t i = 0; i < full.size(); ++i) out[bc.index(i)] += full[i];
  return out;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  const char* name = kind == Binary::kAdd ? "add" : kind == Binary::kSub ? "sub" : "mul";
  const Broadcast bc = resolve_broadcast(a, b, name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T y = bv[bc.index(i)];
    switch (kind) {
      case Binary::kAdd: out[i] = av[i] + y; break;
      case Binary::kSub: out[i] = av[i] - y; break;
      case Binary::kMul: out[i] = av[i] * y; break;
    }
  }
  Tensor<T> result(a.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&a, &b})) {
    tape->record(name, {a, b}, result, [kind, bc, a, b](std::span<const T> g) {
      const std::size_t n = g.size();
      if (a.requires_grad()) {
        std::vector<T> ga(n);
        if (kind == Binary::kMul) {
          const auto bv = b.data();
          for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * bv[bc.index(i)];
        } else {
          std::copy(g.begin(), g.end(), ga.begin());
        }
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<T> full(n);
        const auto av = a.data();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Binary::kAdd: full[i] = g[i]; break;
            case Binary::kSub: full[i] = -g[i]; break;
            case Binary::kMul: full[i] = g[i] * av[i]; break;
          }
        }
        b.accumulate_grad(reduce_to<T>(bc, full, b.size()));
      }
    });
  }
  return result;
}

template <typename T>
T clamp_open_unit(T y) {
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(y, lo, hi);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  return binary(Binary::kAdd, a, b, tape);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  return binary(Binary::kSub, a, b, tape);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  return binary(Binary::kMul, a, b, tape);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  Tensor<T> result(a.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&a})) {
    tape->record("relu", {a}, result, [a](std::span<const T> g) {
      const auto av = a.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = av[i] > T(0) ? g[i] : T(0);
      a.accumulate_grad(ga);
    });
  }
  return result;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a, Tape<T>* tape) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    T y;
    if (x >= T(0)) {
      y = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      y = e / (T(1) + e);
    }
    out[i] = clamp_open_unit(y);
  }
  Tensor<T> result(a.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&a})) {
    tape->record("sigmoid", {a}, result, [a, result](std::span<const T> g) {
      const auto yv = result.data();
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * yv[i] * (T(1) - yv[i]);
      a.accumulate_grad(ga);
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Tensor<T> result(a.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&a})) {
    tape->record("scale", {a}, result, [a, factor](std::span<const T> g) {
      std::vector<T> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * factor;
      a.accumulate_grad(ga);
    });
  }
  return result;
}

template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>* b, Tape<T>* tape) {
  auto need_b = [&]() -> const Tensor<T>& {
    if (b == nullptr || !b->defined()) {
      throw TensorError(std::string(to_string(kind)) + " requires a second operand");
    }
    return *b;
  };
  switch (kind) {
    case Elementwise::kAdd: return add(a, need_b(), tape);
    case Elementwise::kSub: return sub(a, need_b(), tape);
    case Elementwise::kMul: return mul(a, need_b(), tape);
    case Elementwise::kRelu: return relu(a, tape);
    case Elementwise::kSigmoid: return sigmoid(a, tape);
    case Elementwise::kScale: {
      const Tensor<T>& f = need_b();
      if (f.size() != 1) throw ShapeError("scale factor must be a single value, got " + shape_to_string(f.shape()));
      return scale(a, f.item(), tape);
    }
  }
  throw TensorError("unknown elementwise kind");
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;   // input
  std::size_t o, kh, kw;    // kernel
  std::size_t oh, ow;       // output
  std::size_t stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col[(ci*kh + ki)*kw + kj][oy*ow + ox] = padded input at the receptive field.
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, Conv2dParams params,
                 Tape<T>* tape) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW kernel, got " + shape_to_string(input.shape()) + " and " +
                     shape_to_string(kernel.shape()));
  }
  if (params.stride == 0) throw TensorError("conv2d stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = params.stride;
  g.pad = params.padding;
  if (kernel.dim(1) != g.c) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input.shape()) + " vs kernel " +
                     shape_to_string(kernel.shape()));
  }
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                     shape_to_string(input.shape()));
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  const bool has_bias = bias != nullptr && bias->defined();
  if (has_bias && (bias->size() != g.o)) {
    throw ShapeError("conv2d bias " + shape_to_string(bias->shape()) + " does not match " + std::to_string(g.o) +
                     " output channels");
  }

  const std::size_t in_sample = g.c * g.h * g.w;
  const std::size_t out_sample = g.o * g.pixels();
  std::vector<T> out(g.n * out_sample, T(0));
  std::vector<T> col(g.is_pointwise() ? 0 : g.patch() * g.pixels());
  const T* x = input.ptr();
  const T* k = kernel.ptr();
  for (std::size_t s = 0; s < g.n; ++s) {
    const T* src = x + s * in_sample;
    if (!g.is_pointwise()) {
      im2col(g, src, col.data());
      src = col.data();
    }
    T* dst = out.data() + s * out_sample;
    if (has_bias) {
      const auto bv = bias->data();
      for (std::size_t oc = 0; oc < g.o; ++oc) std::fill(dst + oc * g.pixels(), dst + (oc + 1) * g.pixels(), bv[oc]);
    }
    detail::gemm_nn(g.o, g.pixels(), g.patch(), k, src, dst);
  }
  Tensor<T> result(Shape{g.n, g.o, g.oh, g.ow}, std::move(out));

  const Tensor<T> b = has_bias ? *bias : Tensor<T>();
  if (Tape<T>::should_record(tape, {&input, &kernel, has_bias ? bias : nullptr})) {
    std::vector<Tensor<T>> inputs{input, kernel};
    if (has_bias) inputs.push_back(b);
    tape->record("conv2d", std::move(inputs), result, [g, input, kernel, b](std::span<const T> grad) {
      const bool want_x = input.requires_grad();
      const bool want_k = kernel.requires_grad();
      const bool want_b = b.defined() && b.requires_grad();
      const std::size_t in_sample = g.c * g.h * g.w;
      const std::size_t out_sample = g.o * g.pixels();
      std::vector<T> col(g.is_pointwise() ? 0 : g.patch() * g.pixels());
      std::vector<T> gk(want_k ? kernel.size() : 0, T(0));
      std::vector<T> gx(want_x ? input.size() : 0, T(0));
      std::vector<T> gb(want_b ? g.o : 0, T(0));
      std::vector<T> gcol(want_x && !g.is_pointwise() ? g.patch() * g.pixels() : 0);
      for (std::size_t s = 0; s < g.n; ++s) {
        const T* gs = grad.data() + s * out_sample;
        if (want_k) {
          const T* src = input.ptr() + s * in_sample;
          if (!g.is_pointwise()) {
            im2col(g, src, col.data());
            src = col.data();
          }
          detail::gemm_nt(g.o, g.patch(), g.pixels(), gs, src, gk.data());
        }
        if (want_x) {
          if (g.is_pointwise()) {
            detail::gemm_tn(g.patch(), g.pixels(), g.o, kernel.ptr(), gs, gx.data() + s * in_sample);
          } else {
            std::fill(gcol.begin(), gcol.end(), T(0));
            detail::gemm_tn(g.patch(), g.pixels(), g.o, kernel.ptr(), gs, gcol.data());
            col2im(g, gcol.data(), gx.data() + s * in_sample);
          }
        }
        if (want_b) {
          for (std::size_t oc = 0; oc < g.o; ++oc) {
            T acc = T(0);
            for (std::size_t p = 0; p < g.pixels(); ++p) acc += gs[oc * g.pixels() + p];
            gb[oc] += acc;
          }
        }
      }
      if (want_x) input.accumulate_grad(gx);
      if (want_k) kernel.accumulate_grad(gk);
      if (want_b) b.accumulate_grad(gb);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride, std::size_t padding,
                     Tape<T>* tape) {
  if (input.rank() != 4) throw ShapeError("max_pool2d expects NCHW input, got " + shape_to_string(input.shape()));
  if (window == 0 || stride == 0) throw TensorError("max_pool2d window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h + 2 * padding || window > w + 2 * padding) {
    throw ShapeError("max_pool2d window " + std::to_string(window) + " larger than padded input " +
                     shape_to_string(input.shape()));
  }
  if (padding >= window) throw TensorError("max_pool2d padding must be smaller than the window");
  const std::size_t oh = (h + 2 * padding - window) / stride + 1;
  const std::size_t ow = (w + 2 * padding - window) / stride + 1;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < window; ++ki) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < window; ++kj) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  Tensor<T> result(Shape{n, c, oh, ow}, std::move(out));
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("max_pool2d", {input}, result, [input, argmax = std::move(argmax)](std::span<const T> g) {
      std::vector<T> gx(input.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
      input.accumulate_grad(gx);
    });
  }
  return result;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool expects NCHW input, got " + shape_to_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<T> out(n * c);
  const T* x = input.ptr();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += x[plane * hw + i];
    out[plane] = acc / static_cast<T>(hw);
  }
  Tensor<T> result(Shape{n, c, 1, 1}, std::move(out));
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("global_avg_pool", {input}, result, [input, hw](std::span<const T> g) {
      std::vector<T> gx(input.size());
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t plane = 0; plane < g.size(); ++plane) {
        std::fill(gx.begin() + plane * hw, gx.begin() + (plane + 1) * hw, g[plane] * inv);
      }
      input.accumulate_grad(gx);
    });
  }
  return result;
}

template <typename T>
Tensor<T> pool(const Tensor<T>& input, PoolKind kind, std::optional<std::size_t> window,
               std::optional<std::size_t> stride, std::size_t padding, Tape<T>* tape) {
  if (kind == PoolKind::kGlobalAvg) return global_avg_pool(input, tape);
  if (!window || !stride) throw TensorError("max pooling requires a window and a stride");
  return max_pool2d(input, *window, *stride, padding, tape);
}

// ---------------------------------------------------------------------------
// Dense and shape ops

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("dense expects N×F input and F×U weight, got " + shape_to_string(input.shape()) + " and " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), u = weight.dim(1);
  if (weight.dim(0) != f) {
    throw ShapeError("dense inner dimension mismatch: input " + shape_to_string(input.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias.size() != u) {
    throw ShapeError("dense bias " + shape_to_string(bias.shape()) + " does not match " + std::to_string(u) +
                     " units");
  }
  std::vector<T> out(n * u);
  const auto bv = bias.data();
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * u);
  detail::gemm_nn(n, u, f, input.ptr(), weight.ptr(), out.data());
  Tensor<T> result(Shape{n, u}, std::move(out));
  if (Tape<T>::should_record(tape, {&input, &weight, &bias})) {
    tape->record("dense", {input, weight, bias}, result, [input, weight, bias, n, f, u](std::span<const T> g) {
      if (input.requires_grad()) {
        std::vector<T> gx(n * f, T(0));
        detail::gemm_nt(n, f, u, g.data(), weight.ptr(), gx.data());
        input.accumulate_grad(gx);
      }
      if (weight.requires_grad()) {
        std::vector<T> gw(f * u, T(0));
        detail::gemm_tn(f, u, n, input.ptr(), g.data(), gw.data());
        weight.accumulate_grad(gw);
      }
      if (bias.requires_grad()) {
        std::vector<T> gb(u, T(0));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < u; ++j) gb[j] += g[i * u + j];
        }
        bias.accumulate_grad(gb);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape, Tape<T>* tape) {
  if (numel(shape) != input.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(input.shape()) + " to " + shape_to_string(shape));
  }
  auto v = input.data();
  Tensor<T> result(std::move(shape), std::vector<T>(v.begin(), v.end()));
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("reshape", {input}, result, [input](std::span<const T> g) { input.accumulate_grad(g); });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape) {
  T acc = T(0);
  for (T v : input.data()) acc += v;
  Tensor<T> result = Tensor<T>::scalar(acc);
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("sum", {input}, result, [input](std::span<const T> g) {
      std::vector<T> gx(input.size(), g[0]);
      input.accumulate_grad(gx);
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input, Tape<T>* tape) {
  T acc = T(0);
  for (T v : input.data()) acc += v;
  const T count = static_cast<T>(input.size());
  Tensor<T> result = Tensor<T>::scalar(acc / count);
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("mean", {input}, result, [input, count](std::span<const T> g) {
      std::vector<T> gx(input.size(), g[0] / count);
      input.accumulate_grad(gx);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batch normalization and dropout

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, const BatchNormOptions& options, Tape<T>* tape) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw ShapeError("batch_norm expects N×C or NCHW input, got " + shape_to_string(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->size() != c) {
      throw ShapeError("batch_norm parameter " + shape_to_string(p->shape()) + " does not match " +
                       std::to_string(c) + " channels of " + shape_to_string(input.shape()));
    }
  }
  if (!(options.epsilon > 0.0)) throw TensorError("batch_norm epsilon must be positive");
  const std::size_t count = n * inner;
  const T* x = input.ptr();
  std::vector<T> mu(c), inv_std(c);
  if (options.use_batch_stats) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      if (options.update_running) {
        const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        rm[ch] = static_cast<T>((1.0 - options.momentum) * rm[ch] + options.momentum * m);
        rv[ch] = static_cast<T>((1.0 - options.momentum) * rv[ch] + options.momentum * unbiased);
      }
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + options.epsilon));
    }
  }

  std::vector<T> xhat(input.size());
  std::vector<T> out(input.size());
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (x[base + i] - mu[ch]) * inv_std[ch];
        xhat[base + i] = h;
        out[base + i] = gv[ch] * h + bv[ch];
      }
    }
  }
  Tensor<T> result(input.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&input, &gamma, &beta})) {
    const bool batch_stats = options.use_batch_stats;
    tape->record("batch_norm", {input, gamma, beta}, result,
                 [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, inner, count,
                  batch_stats](std::span<const T> g) {
                   std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
                   for (std::size_t b = 0; b < n; ++b) {
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t base = (b * c + ch) * inner;
                       for (std::size_t i = 0; i < inner; ++i) {
                         sum_g[ch] += g[base + i];
                         sum_gx[ch] += g[base + i] * xhat[base + i];
                       }
                     }
                   }
                   if (gamma.requires_grad()) gamma.accumulate_grad(sum_gx);
                   if (beta.requires_grad()) beta.accumulate_grad(sum_g);
                   if (!input.requires_grad()) return;
                   const auto gv = gamma.data();
                   std::vector<T> gx(input.size());
                   const T m = static_cast<T>(count);
                   for (std::size_t b = 0; b < n; ++b) {
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t base = (b * c + ch) * inner;
                       const T k = gv[ch] * inv_std[ch];
                       for (std::size_t i = 0; i < inner; ++i) {
                         if (batch_stats) {
                           gx[base + i] = k * (g[base + i] - sum_g[ch] / m - xhat[base + i] * sum_gx[ch] / m);
                         } else {
                           gx[base + i] = k * g[base + i];
                         }
                       }
                     }
                   }
                   input.accumulate_grad(gx);
                 });
  }
  return result;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, std::mt19937_64& rng, Tape<T>* tape) {
  if (!(rate >= 0.0 && rate < 1.0)) throw TensorError("dropout rate must lie in [0, 1)");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> mask(input.size());
  for (T& m : mask) m = u(rng) < rate ? T(0) : keep_scale;
  const auto xv = input.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  Tensor<T> result(input.shape(), std::move(out));
  if (Tape<T>::should_record(tape, {&input})) {
    tape->record("dropout", {input}, result, [input, mask = std::move(mask)](std::span<const T> g) {
      std::vector<T> gx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * mask[i];
      input.accumulate_grad(gx);
    });
  }
  return result;
}

#define SNR_INSTANTIATE_OPS(T)                                                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                                             \
  template Tensor<T> relu(const Tensor<T>&, Tape<T>*);                                                              \
  template Tensor<T> sigmoid(const Tensor<T>&, Tape<T>*);                                                           \
  template Tensor<T> scale(const Tensor<T>&, T, Tape<T>*);                                                          \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, const Tensor<T>*, Tape<T>*);                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Conv2dParams, Tape<T>*);          \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t, Tape<T>*);                 \
  template Tensor<T> global_avg_pool(const Tensor<T>&, Tape<T>*);                                                   \
  template Tensor<T> pool(const Tensor<T>&, PoolKind, std::optional<std::size_t>, std::optional<std::size_t>,       \
                          std::size_t, Tape<T>*);                                                                   \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape, Tape<T>*);                                                    \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);                                                               \
  template Tensor<T> mean(const Tensor<T>&, Tape<T>*);                                                              \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,       \
                                const BatchNormOptions&, Tape<T>*);                                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&, Tape<T>*);

SNR_INSTANTIATE_OPS(float)
SNR_INSTANTIATE_OPS(double)

#undef SNR_INSTANTIATE_OPS

}  // namespace snr::ops
