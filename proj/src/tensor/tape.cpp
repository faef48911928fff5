#include "snr/tape.hpp"

#include <unordered_set>
#include <vector>

namespace snr {

template <typename T>
void Tape<T>::record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output, BackwardFn fn) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
}

template <typename T>
bool Tape<T>::contains(const Tensor<T>& t) const {
  for (const Node& n : nodes_) {
    if (n.output.same_storage(t)) return true;
  }
  return false;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root, BackwardMode mode) {
  if (!root.defined() || root.size() != 1) {
    throw AutodiffError("backward root must be a scalar, got shape " +
                        (root.defined() ? shape_to_string(root.shape()) : std::string("<undefined>")));
  }
  std::size_t root_index = nodes_.size();
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].output.same_storage(root)) {
      root_index = i;
      break;
    }
  }
  if (root_index == nodes_.size()) throw AutodiffError("backward root was not produced on this tape");

  // Restrict the sweep to ancestors of the root and reset their gradients, so
  // a retained tape can be traversed again without double counting.
  std::vector<bool> active(root_index + 1, false);
  std::unordered_set<const void*> reachable{root.id()};
  for (std::size_t i = root_index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!reachable.contains(node.output.id())) continue;
    active[i] = true;
    node.output.mutable_grad();
    node.output.zero_grad();
    for (const Tensor<T>& in : node.inputs) {
      if (in.requires_grad()) reachable.insert(in.id());
    }
  }

  Tensor<T> seed = root;
  seed.mutable_grad()[0] = T(1);

  std::vector<T> scaled;
  for (std::size_t i = root_index + 1; i-- > 0;) {
    if (!active[i]) continue;
    Node& node = nodes_[i];
    std::span<const T> g = node.output.grad();
    if (fault_ && fault_->op == node.op) {
      scaled.assign(g.begin(), g.end());
      for (T& v : scaled) v *= fault_->scale;
      g = scaled;
    }
    node.backward(g);
  }

  if (mode == BackwardMode::kClear) nodes_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace snr
