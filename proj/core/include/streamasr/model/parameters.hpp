#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "streamasr/numerics/tape.hpp"

namespace streamasr {

/// Named trainable tensors. An alias path resolves to a canonical path, so
/// shared heads are one tensor reachable under several names.
template <typename T>
class ParameterSet {
 public:
  void add(const std::string& path, Tensor<T> value);
  /// Makes `path` refer to the tensor stored under `target` (itself resolved).
  void alias(const std::string& path, const std::string& target);
  /// Removes an alias so `path` can be added as its own tensor.
  void unalias(const std::string& path);

  bool contains(std::string_view path) const;
  bool is_alias(std::string_view path) const;
  const std::string& resolve(std::string_view path) const;

  Tensor<T>& get(std::string_view path);
  const Tensor<T>& get(std::string_view path) const;

  /// Canonical paths in sorted order.
  std::vector<std::string> paths() const;
  const std::map<std::string, std::string, std::less<>>& aliases() const noexcept { return aliases_; }
  const std::map<std::string, Tensor<T>, std::less<>>& tensors() const noexcept { return tensors_; }

  /// Scalar count over canonical tensors; aliases are not double counted.
  std::size_t parameter_count() const;
  std::size_t parameter_count_if(const std::function<bool(const std::string&)>& pred) const;

  /// Same canonical paths, shapes and alias table.
  bool same_layout(const ParameterSet& other) const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [p, t] : tensors_) out.add(p, t.template cast<U>());
    for (const auto& [a, target] : aliases_) out.alias(a, target);
    return out;
  }

  bool operator==(const ParameterSet&) const = default;

 private:
  std::map<std::string, Tensor<T>, std::less<>> tensors_;
  std::map<std::string, std::string, std::less<>> aliases_;
};

/// Gradient buffers keyed by canonical parameter path.
template <typename T>
using Gradients = std::map<std::string, Tensor<T>, std::less<>>;

/// Parameters placed on a tape as leaves, bound lazily on first use. Frozen
/// paths are bound without requires_grad so no gradient work is done for them.
template <typename T>
class BoundParameters {
 public:
  using TrainablePredicate = std::function<bool(const std::string& canonical_path)>;

  BoundParameters(const ParameterSet<T>& params, Tape<T>& tape, TrainablePredicate trainable = nullptr);

  Var<T> operator[](std::string_view path);
  Tape<T>& tape() noexcept { return *tape_; }
  const ParameterSet<T>& parameters() const noexcept { return *params_; }

  /// Adds gradients of bound trainable parameters into `into` (allocating as needed).
  void accumulate_gradients(Gradients<T>& into) const;

 private:
  const ParameterSet<T>* params_;
  Tape<T>* tape_;
  TrainablePredicate trainable_;
  std::unordered_map<std::string, Var<T>> bound_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class BoundParameters<float>;
extern template class BoundParameters<double>;

}  // namespace streamasr
