#pragma once

#include <random>

#include "streamasr/model/model.hpp"

namespace streamasr::testing {

/// Smallest configuration that still exercises every structural feature.
inline ModelConfig tiny_config(CtcSharing sharing = CtcSharing::c1, bool added = true) {
  ModelConfig c;
  c.n1 = 1;
  c.n2 = 2;
  c.m = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.causal_kernel = 3;
  c.centered_kernel = 3;
  c.vocab_size = 5;
  c.feat_dim = 4;
  c.decoder_layers = 1;
  c.ctc_sharing = sharing;
  c.with_added_layers = added;
  return c;
}

template <typename T = double>
Tensor<T> random_features(std::mt19937_64& rng, std::size_t frames, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<T> t(Shape{frames, dim});
  for (auto& v : t.data()) v = static_cast<T>(g(rng));
  return t;
}

}  // namespace streamasr::testing
