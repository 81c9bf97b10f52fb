#pragma once

#include <vector>

#include "streamasr/model/model.hpp"

namespace streamasr {

/// Chunk-by-chunk streaming encoder with attention and convolution caches.
/// Bottom-block frames are produced one bottom chunk at a time, top-block
/// frames one top chunk at a time; finish() flushes partial trailing chunks.
/// Outputs match the masked full pass of Model::encode in streaming mode.
template <typename T>
class StreamingEncoder {
 public:
  StreamingEncoder(const Model<T>& model, const ParameterSet<T>& params, ChunkSpec chunk);

  /// Appends raw feature rows and advances as far as complete chunks allow.
  void accept(const Tensor<T>& rows);
  /// Marks end of input and processes any incomplete chunks.
  void finish();

  std::size_t input_frames() const noexcept { return input_.size() / feat_dim_; }
  std::size_t bottom_frames() const noexcept { return bottom_.empty() ? 0 : bottom_.rows(); }
  std::size_t top_frames() const noexcept { return top_.empty() ? 0 : top_.rows(); }
  /// Streaming bottom tap [bottom_frames, d].
  const Tensor<T>& bottom() const noexcept { return bottom_; }
  /// Streaming top tap [top_frames, d].
  const Tensor<T>& top() const noexcept { return top_; }
  bool finished() const noexcept { return finished_; }

 private:
  void advance();
  void run_bottom(std::size_t count);
  void run_top(std::size_t count);

  const Model<T>* model_;
  const ParameterSet<T>* params_;
  ChunkSpec chunk_;
  std::size_t feat_dim_;
  std::vector<T> input_;
  Tensor<T> bottom_, top_;
  std::vector<LayerCache<T>> bottom_cache_, top_cache_;
  bool finished_ = false;
};

extern template class StreamingEncoder<float>;
extern template class StreamingEncoder<double>;

}  // namespace streamasr
