#include "streamasr/numerics/tape.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace streamasr {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& value, std::string_view op_name) {
  for (T v : value.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by " + std::string(op_name));
    }
  }
}

}  // namespace

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  require_finite(value, "leaf");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn backward,
                       std::string_view op_name) {
  require_finite(value, op_name);
  bool needs = false;
  for (const auto& p : parents) {
    if (p.valid() && &p.tape() != this) throw ContractError("operand recorded on a different tape");
    needs = needs || (p.valid() && nodes_[p.id()].requires_grad);
  }
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  n.is_leaf = false;
  if (needs) n.backward = std::move(backward);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>* Tape<T>::accumulator(Var<T> v) {
  if (!v.valid()) return nullptr;
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor<T>(n.value.shape());
  }
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!loss.valid() || &loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  const Node& ln = nodes_[loss.id()];
  if (ln.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_to_string(ln.value.shape()));
  }
  if (!std::isfinite(ln.value[0])) throw NumericError("backward: loss is not finite");
  if (!ln.requires_grad) return;

  for (auto& n : nodes_) {
    if (!n.is_leaf) n.grad = Tensor<T>();
  }
  (*accumulator(loss))[0] += T{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.is_leaf || !n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor<T>();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace streamasr
