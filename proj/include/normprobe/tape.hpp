// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "normprobe/tensor.hpp"

namespace normprobe {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaves either borrow an external tensor (parameters,
/// inputs) or own a constant. backward() clears interior gradients and
/// accumulates into the `grad()` buffers of borrowed tensors that have
/// requires_grad set; calling it twice accumulates twice.
template <typename T>
class Tape {
 public:
  /// Receives the tape and the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Borrows `tensor`; it must outlive the tape.
  Var leaf(Tensor3<T>& tensor);
  Var constant(Tensor3<T> value);
  /// Appends an op result. `needs_grad` is true when any input needs a gradient.
  Var record(Tensor3<T> value, bool needs_grad, BackwardFn backward);

  const Tensor3<T>& value(Var v) const;
  const Shape3& shape(Var v) const { return value(v).shape(); }
  bool needs_grad(Var v) const { return nodes_[v.id]->needs_grad; }
  /// Gradient buffer for `v`; zero-allocated on first use.
  std::span<T> grad(Var v);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor3<T> owned;
    Tensor3<T>* external = nullptr;
    std::vector<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v);

  std::vector<std::unique_ptr<Node>> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace normprobe
