#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stsc/error.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode autodiff tape.
///
/// Every op appends one node holding its output value. Nodes are appended in
/// evaluation order, so walking them backwards is a reverse topological order.
/// A node whose inputs all have requires_grad == false records no backward
/// closure, which makes inference on a tape essentially free of bookkeeping.
///
/// backward() may run once per tape; call reset() before reusing it.
template <typename T>
class Tape {
 public:
  /// Adds grad contributions of node `self` into its inputs' grads.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Leaf holding a trainable (or otherwise differentiated) value.
  Var param(Tensor4<T> value) { return push(std::move(value), true, nullptr); }

  /// Leaf that never receives gradients.
  Var constant(Tensor4<T> value) { return push(std::move(value), false, nullptr); }

  /// Records an op output. `backward` is dropped when no input needs grads.
  Var record(Tensor4<T> value, bool requires_grad, BackwardFn backward) {
    if (backward_done_) throw TapeError("cannot record on a tape after backward(); call reset()");
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr);
  }

  const Tensor4<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v. Zero if v was never reached.
  const Tensor4<T>& grad(Var v) {
    Node& nd = node_mut(v);
    ensure_grad(nd);
    return nd.grad;
  }

  /// Mutable accumulation buffer used by op backward closures.
  Tensor4<T>& grad_buffer(std::size_t id) {
    Node& nd = nodes_.at(id);
    ensure_grad(nd);
    return nd.grad;
  }
  Tensor4<T>& grad_buffer(Var v) { return grad_buffer(v.id); }

  /// Populates grads of every requires_grad ancestor of `loss` (a 1x1x1x1 value).
  void backward(Var loss) {
    if (backward_done_) throw TapeError("backward() called twice on the same tape without reset()");
    const Node& target = node(loss);
    if (target.value.size() != 1) {
      throw TapeError("backward() needs a scalar loss, got shape " + target.value.shape().str());
    }
    backward_done_ = true;
    if (!target.requires_grad) return;
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& nd = nodes_[i];
      if (nd.backward && nd.has_grad) nd.backward(*this, i);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  bool backward_done() const noexcept { return backward_done_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor4<T> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, false, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw TapeError("Var does not belong to this tape");
    return nodes_[v.id];
  }
  Node& node_mut(Var v) {
    if (v.id >= nodes_.size()) throw TapeError("Var does not belong to this tape");
    return nodes_[v.id];
  }

  static void ensure_grad(Node& nd) {
    if (!nd.has_grad) {
      nd.grad = Tensor4<T>(nd.value.shape());
      nd.has_grad = true;
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace stsc
