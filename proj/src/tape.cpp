// SPDX-License-Identifier: Apache-2.0
#include "normprobe/tape.hpp"

#include <stdexcept>

namespace normprobe {

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("variable is not on this tape");
  return *nodes_[v.id];
}

template <typename T>
Var Tape<T>::leaf(Tensor3<T>& tensor) {
  auto n = std::make_unique<Node>();
  n->external = &tensor;
  n->needs_grad = tensor.requires_grad();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor3<T> value) {
  auto n = std::make_unique<Node>();
  n->owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor3<T> value, bool needs_grad, BackwardFn backward) {
  auto n = std::make_unique<Node>();
  n->owned = std::move(value);
  n->needs_grad = needs_grad;
  if (needs_grad) n->backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor3<T>& Tape<T>::value(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("variable is not on this tape");
  const Node& n = *nodes_[v.id];
  return n.external ? *n.external : n.owned;
}

template <typename T>
std::span<T> Tape<T>::grad(Var v) {
  Node& n = node(v);
  if (n.external) return n.external->grad();
  if (n.grad.empty()) n.grad.assign(n.owned.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape(loss)));
  }
  for (auto& n : nodes_) {
    if (!n->external) n->grad.clear();
  }
  Node& root = node(loss);
  if (!root.needs_grad) return;
  if (root.external) {
    root.external->grad()[0] += T(1);
    return;
  }
  grad(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = *nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace normprobe
