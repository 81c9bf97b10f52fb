#include "streamasr/model/streaming.hpp"

#include <algorithm>

#include "streamasr/errors.hpp"

namespace streamasr {

namespace {

template <typename T>
void append_rows(Tensor<T>& dst, const Tensor<T>& rows) {
  if (dst.empty()) {
    dst = rows;
    return;
  }
  std::vector<T> data = std::move(dst.storage());
  data.insert(data.end(), rows.storage().begin(), rows.storage().end());
  const std::size_t n = data.size() / rows.cols();
  dst = Tensor<T>(Shape{n, rows.cols()}, std::move(data));
}

template <typename T>
Tensor<T> row_range(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const auto first = a.storage().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
  const auto last = a.storage().begin() + static_cast<std::ptrdiff_t>(end * a.cols());
  return Tensor<T>(Shape{end - begin, a.cols()}, std::vector<T>(first, last));
}

}  // namespace

template <typename T>
StreamingEncoder<T>::StreamingEncoder(const Model<T>& model, const ParameterSet<T>& params, ChunkSpec chunk)
    : model_(&model), params_(&params), chunk_(chunk), feat_dim_(static_cast<std::size_t>(model.config().feat_dim)) {
  chunk_.validate();
  if (chunk_.full_context) throw ConfigError("streaming encoder needs a finite chunk size");
  bottom_cache_.resize(bottom_layer_prefixes(model.config()).size());
  top_cache_.resize(top_layer_prefixes(model.config()).size());
}

template <typename T>
void StreamingEncoder<T>::accept(const Tensor<T>& rows) {
  if (finished_) throw ContractError("streaming encoder: input after finish()");
  if (rows.empty()) return;
  if (rows.rank() != 2 || rows.cols() != feat_dim_) {
    throw DimensionError("streaming encoder: expected rows of width " + std::to_string(feat_dim_) + ", got " +
                         shape_to_string(rows.shape()));
  }
  input_.insert(input_.end(), rows.storage().begin(), rows.storage().end());
  advance();
}

template <typename T>
void StreamingEncoder<T>::finish() {
  if (finished_) return;
  finished_ = true;
  advance();
}

template <typename T>
void StreamingEncoder<T>::advance() {
  const std::size_t available = subsampled_length(input_frames());
  const auto bc = static_cast<std::size_t>(chunk_.bottom_chunk), tc = static_cast<std::size_t>(chunk_.top_chunk);
  while (bottom_frames() + bc <= available) run_bottom(bc);
  if (finished_ && bottom_frames() < available) run_bottom(available - bottom_frames());
  while (top_frames() + tc <= bottom_frames()) run_top(tc);
  if (finished_ && top_frames() < bottom_frames()) run_top(bottom_frames() - top_frames());
}

template <typename T>
void StreamingEncoder<T>::run_bottom(std::size_t count) {
  const std::size_t a = bottom_frames(), b = a + count;
  const auto first = input_.begin() + static_cast<std::ptrdiff_t>(4 * a * feat_dim_);
  const auto last = input_.begin() + static_cast<std::ptrdiff_t>((4 * b + 3) * feat_dim_);
  const Tensor<T> window(Shape{4 * count + 3, feat_dim_}, std::vector<T>(first, last));

  Tape<T> tape;
  BoundParameters<T> p(*params_, tape);
  Var<T> x = model_->subsample(p, window, a);
  const auto prefixes = bottom_layer_prefixes(model_->config());
  for (std::size_t i = 0; i < prefixes.size(); ++i) x = model_->conformer_layer_step(p, prefixes[i], x, bottom_cache_[i]);
  append_rows(bottom_, x.value());
}

template <typename T>
void StreamingEncoder<T>::run_top(std::size_t count) {
  const std::size_t a = top_frames();
  Tape<T> tape;
  BoundParameters<T> p(*params_, tape);
  Var<T> x = tape.constant(row_range(bottom_, a, a + count));
  const auto prefixes = top_layer_prefixes(model_->config());
  for (std::size_t i = 0; i < prefixes.size(); ++i) x = model_->conformer_layer_step(p, prefixes[i], x, top_cache_[i]);
  append_rows(top_, x.value());
}

template class StreamingEncoder<float>;
template class StreamingEncoder<double>;

}  // namespace streamasr
