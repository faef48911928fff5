#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snr/tensor.hpp"

namespace snr {

class AutodiffError : public TensorError {
 public:
  using TensorError::TensorError;
};

// What backward() does with the recorded operations once it is done.
// kClear empties the tape; kRetain keeps it so the same graph can be
// traversed again (leaf gradients then accumulate across traversals).
enum class BackwardMode { kClear, kRetain };

// Records operations in execution order and replays them in reverse to
// propagate gradients. Recording order is a valid topological order because an
// op can only consume tensors that already exist.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  // True when an op consuming `inputs` must be recorded on `tape`.
  static bool should_record(const Tape* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (tape == nullptr) return false;
    for (const Tensor<T>* t : inputs) {
      if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn fn);

  // Populates grad on every requires_grad tensor reachable from `root`, which
  // must be a single-element tensor produced by an op on this tape.
  void backward(const Tensor<T>& root, BackwardMode mode = BackwardMode::kClear);

  bool contains(const Tensor<T>& t) const;
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // Test hook: multiplies the gradient fed into every node named `op`,
  // which simulates a broken backward rule.
  void inject_fault(std::string op, T scale) { fault_ = Fault{std::move(op), scale}; }

 private:
  struct Fault {
    std::string op;
    T scale;
  };

  std::vector<Node> nodes_;
  std::optional<Fault> fault_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace snr
