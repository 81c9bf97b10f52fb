#include "streamasr/model/mask.hpp"

#include <algorithm>

#include "streamasr/errors.hpp"

namespace streamasr {

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed)
    : rows_(rows), cols_(cols), allowed_(std::move(allowed)) {
  if (allowed_.size() != rows_ * cols_) throw DimensionError("attention mask: flag count does not match shape");
}

AttentionMask make_chunk_mask(std::size_t frames, std::size_t chunk) {
  if (chunk < 1) throw ConfigError("chunk mask: chunk size must be >= 1");
  std::vector<std::uint8_t> flags(frames * frames, 0);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t visible_end = std::min(frames, (i / chunk + 1) * chunk);
    for (std::size_t j = 0; j < visible_end; ++j) flags[i * frames + j] = 1;
  }
  return AttentionMask(frames, frames, std::move(flags));
}

AttentionMask make_full_mask(std::size_t rows, std::size_t cols) {
  return AttentionMask(rows, cols, std::vector<std::uint8_t>(rows * cols, 1));
}

AttentionMask make_causal_mask(std::size_t frames) { return make_chunk_mask(frames, 1); }

}  // namespace streamasr
