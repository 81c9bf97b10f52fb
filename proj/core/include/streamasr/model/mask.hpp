#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace streamasr {

/// Row-major boolean visibility matrix: allowed(i, j) means query i may attend key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return allowed_[i * cols_ + j] != 0; }
  std::span<const std::uint8_t> flags() const noexcept { return allowed_; }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// i attends j iff floor(j / chunk) <= floor(i / chunk); unlimited left context.
AttentionMask make_chunk_mask(std::size_t frames, std::size_t chunk);
AttentionMask make_full_mask(std::size_t rows, std::size_t cols);
/// Lower-triangular mask, identical to make_chunk_mask(frames, 1).
AttentionMask make_causal_mask(std::size_t frames);

}  // namespace streamasr
