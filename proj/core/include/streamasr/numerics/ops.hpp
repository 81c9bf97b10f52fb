#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "streamasr/numerics/tape.hpp"

namespace streamasr {

/// Padding policy of the depthwise convolution branches.
enum class ConvMode {
  causal,    ///< left-pad k-1: output[t] sees x[t-k+1 .. t]
  centered,  ///< pad (k-1)/2 both sides: output[t] sees x[t-(k-1)/2 .. t+(k-1)/2]
};

namespace ops {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a · bᵀ for a[m,k], b[n,k].
template <typename T> Var<T> matmul_bt(Var<T> a, Var<T> b);
/// x · w + bias, bias broadcast over rows. `bias` may be an invalid Var.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
/// a + b where b has shape [cols] and is broadcast over the rows of a.
template <typename T> Var<T> add_row(Var<T> a, Var<T> b);
template <typename T> Var<T> add_constant(Var<T> a, const Tensor<T>& c);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

/// Numerically stable log-softmax along `axis` (negative counts from the back).
template <typename T> Var<T> log_softmax(Var<T> x, int axis = -1);
/// Row softmax of a [rows, cols] score matrix restricted to `allowed`
/// (row-major 0/1 flags, empty = all allowed). Every row needs one allowed entry.
template <typename T> Var<T> masked_softmax(Var<T> scores, std::span<const std::uint8_t> allowed);

/// Per-channel 1-D convolution of x[T,d] with kernel[k,d]; zero padding per `mode`.
template <typename T> Var<T> depthwise_conv1d(Var<T> x, Var<T> kernel, ConvMode mode);

/// Normalizes the last axis to zero mean / unit variance, then gamma * x + beta.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> swish(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
/// Splits the last axis into halves [a; b] and returns a * sigmoid(b).
template <typename T> Var<T> glu(Var<T> x);

template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);

/// Stacks `kernel` consecutive rows with the given stride: [T,C] -> [(T-kernel)/stride+1, kernel*C].
template <typename T> Var<T> frame_stack(Var<T> x, std::size_t kernel, std::size_t stride);

/// Gathers rows of table[V,d] by index.
template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);

/// Σ smooth_l1(a - b) with threshold 1: 0.5 r² if |r| < 1, else |r| - 0.5.
template <typename T> Var<T> smooth_l1_sum(Var<T> a, Var<T> b);

/// Copies the value onto the tape as a constant, cutting the gradient path.
template <typename T> Var<T> stop_gradient(Var<T> x);

/// Inverted dropout with a seeded mask. rate == 0 returns x unchanged.
template <typename T> Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

}  // namespace ops
}  // namespace streamasr
