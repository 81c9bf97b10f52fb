#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>

#include "streamasr/numerics/tensor.hpp"

namespace streamasr {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const { return *tape_; }

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  /// Gradient accumulated by the last backward(); nullptr when none reached this node.
  const Tensor<T>* grad() const { return tape_->grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Eager reverse-mode tape. Nodes are appended in execution order, so reverse
/// creation order is a valid reverse topological order. Not thread-safe: one
/// tape per thread of execution.
template <typename T>
class Tape {
 public:
  /// Called with the node's output gradient; must accumulate into parents via accumulator().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. The node requires grad iff any parent does; the
  /// backward closure is dropped otherwise.
  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn backward,
                std::string_view op_name);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward,
                std::string_view op_name) {
    return record(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                  std::move(backward), op_name);
  }

  /// Populates gradients of every requires-grad node reachable from `loss`.
  /// Leaf gradients accumulate across calls until zero_grad().
  void backward(Var<T> loss);
  void zero_grad();

  /// Gradient buffer of `v` for accumulation, or nullptr if `v` does not require grad.
  Tensor<T>* accumulator(Var<T> v);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }
  const Tensor<T>* grad(Var<T> v) const {
    const auto& n = nodes_[v.id()];
    return n.grad.empty() ? nullptr : &n.grad;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace streamasr
