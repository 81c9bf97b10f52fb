#include "streamasr/model/parameters.hpp"

#include "streamasr/errors.hpp"

namespace streamasr {

template <typename T>
void ParameterSet<T>::add(const std::string& path, Tensor<T> value) {
  if (aliases_.contains(path)) throw ContractError("parameter path '" + path + "' is already an alias");
  if (!tensors_.emplace(path, std::move(value)).second) {
    throw ContractError("duplicate parameter path '" + path + "'");
  }
}

template <typename T>
void ParameterSet<T>::alias(const std::string& path, const std::string& target) {
  const std::string canonical = resolve(target);
  if (tensors_.contains(path)) throw ContractError("cannot alias '" + path + "': it owns a tensor");
  if (path == canonical) throw ContractError("alias '" + path + "' refers to itself");
  aliases_[path] = canonical;
}

template <typename T>
void ParameterSet<T>::unalias(const std::string& path) {
  aliases_.erase(path);
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view path) const {
  return tensors_.find(path) != tensors_.end() || aliases_.find(path) != aliases_.end();
}

template <typename T>
bool ParameterSet<T>::is_alias(std::string_view path) const {
  return aliases_.find(path) != aliases_.end();
}

template <typename T>
const std::string& ParameterSet<T>::resolve(std::string_view path) const {
  if (auto it = aliases_.find(path); it != aliases_.end()) return it->second;
  if (auto it = tensors_.find(path); it != tensors_.end()) return it->first;
  throw ContractError("unknown parameter path '" + std::string(path) + "'");
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(std::string_view path) {
  return tensors_.find(resolve(path))->second;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(std::string_view path) const {
  return tensors_.find(resolve(path))->second;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::paths() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [p, t] : tensors_) out.push_back(p);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  return parameter_count_if([](const std::string&) { return true; });
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count_if(const std::function<bool(const std::string&)>& pred) const {
  std::size_t n = 0;
  for (const auto& [p, t] : tensors_)
    if (pred(p)) n += t.size();
  return n;
}

template <typename T>
bool ParameterSet<T>::same_layout(const ParameterSet& other) const {
  if (aliases_ != other.aliases_ || tensors_.size() != other.tensors_.size()) return false;
  for (const auto& [p, t] : tensors_) {
    auto it = other.tensors_.find(p);
    if (it == other.tensors_.end() || it->second.shape() != t.shape()) return false;
  }
  return true;
}

template <typename T>
BoundParameters<T>::BoundParameters(const ParameterSet<T>& params, Tape<T>& tape, TrainablePredicate trainable)
    : params_(&params), tape_(&tape), trainable_(std::move(trainable)) {}

template <typename T>
Var<T> BoundParameters<T>::operator[](std::string_view path) {
  const std::string& canonical = params_->resolve(path);
  if (auto it = bound_.find(canonical); it != bound_.end()) return it->second;
  const bool grad = !trainable_ || trainable_(canonical);
  Var<T> v = tape_->leaf(params_->get(canonical), grad);
  bound_.emplace(canonical, v);
  return v;
}

template <typename T>
void BoundParameters<T>::accumulate_gradients(Gradients<T>& into) const {
  for (const auto& [path, v] : bound_) {
    const Tensor<T>* g = v.grad();
    if (!v.requires_grad() || g == nullptr) continue;
    auto it = into.find(path);
    if (it == into.end()) {
      into.emplace(path, *g);
    } else {
      for (std::size_t i = 0; i < g->size(); ++i) it->second[i] += (*g)[i];
    }
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class BoundParameters<float>;
template class BoundParameters<double>;

}  // namespace streamasr
