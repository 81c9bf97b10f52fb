#pragma once

#include <functional>
#include <ostream>
#include <random>
#include <vector>

#include "streamasr/numerics/ops.hpp"

namespace streamasr::testing {

namespace o = ops;
using V = Var<double>;
using Vs = std::vector<V>;

inline Tensor<double> randn(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = g(rng);
  return t;
}

/// One differentiable primitive wrapped into a scalar loss, with an input sampler.
struct PrimitiveCase {
  const char* name;
  std::function<V(Tape<double>&, const Vs&)> loss;
  std::function<std::vector<Tensor<double>>(std::mt19937_64&)> inputs;
};

inline void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

// Weighted sum so gradients differ per element.
inline V weighted(Tape<double>& tape, V y) {
  Tensor<double> w(y.value().shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
  return o::sum(o::mul(y, tape.leaf(w)));
}

inline std::vector<PrimitiveCase> primitive_cases() {
  auto two = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& rng) { return std::vector<Tensor<double>>{randn(rng, a), randn(rng, b)}; };
  };
  auto one = [](Shape a, double scale = 1.0) {
    return [a, scale](std::mt19937_64& rng) { return std::vector<Tensor<double>>{randn(rng, a, scale)}; };
  };
  std::vector<PrimitiveCase> c;
  c.push_back({"matmul", [](auto& t, const Vs& x) { return weighted(t, o::matmul(x[0], x[1])); }, two({3, 4}, {4, 2})});
  c.push_back({"matmul_bt", [](auto& t, const Vs& x) { return weighted(t, o::matmul_bt(x[0], x[1])); }, two({3, 4}, {5, 4})});
  c.push_back({"linear",
               [](auto& t, const Vs& x) { return weighted(t, o::linear(x[0], x[1], x[2])); },
               [](std::mt19937_64& rng) {
                 return std::vector<Tensor<double>>{randn(rng, {3, 4}), randn(rng, {4, 2}), randn(rng, {2})};
               }});
  c.push_back({"add", [](auto& t, const Vs& x) { return weighted(t, o::add(x[0], x[1])); }, two({3, 2}, {3, 2})});
  c.push_back({"sub", [](auto& t, const Vs& x) { return weighted(t, o::sub(x[0], x[1])); }, two({3, 2}, {3, 2})});
  c.push_back({"mul", [](auto& t, const Vs& x) { return weighted(t, o::mul(x[0], x[1])); }, two({3, 2}, {3, 2})});
  c.push_back({"scale", [](auto& t, const Vs& x) { return weighted(t, o::scale(x[0], -1.7)); }, one({3, 2})});
  c.push_back({"add_row", [](auto& t, const Vs& x) { return weighted(t, o::add_row(x[0], x[1])); }, two({3, 4}, {4})});
  c.push_back({"mean", [](auto&, const Vs& x) { return o::mean(o::mul(x[0], x[0])); }, one({3, 4})});
  c.push_back({"log_softmax", [](auto& t, const Vs& x) { return weighted(t, o::log_softmax(x[0])); }, one({3, 5}, 2.0)});
  c.push_back({"masked_softmax",
               [](auto& t, const Vs& x) {
                 const std::vector<std::uint8_t> allowed{1, 0, 0, 1, 1, 0, 1, 1, 1};
                 return weighted(t, o::masked_softmax(x[0], allowed));
               },
               one({3, 3})});
  c.push_back({"depthwise_causal",
               [](auto& t, const Vs& x) { return weighted(t, o::depthwise_conv1d(x[0], x[1], ConvMode::causal)); },
               two({6, 3}, {3, 3})});
  c.push_back({"depthwise_centered",
               [](auto& t, const Vs& x) { return weighted(t, o::depthwise_conv1d(x[0], x[1], ConvMode::centered)); },
               two({6, 3}, {5, 3})});
  c.push_back({"layer_norm",
               [](auto& t, const Vs& x) { return weighted(t, o::layer_norm(x[0], x[1], x[2])); },
               [](std::mt19937_64& rng) {
                 return std::vector<Tensor<double>>{randn(rng, {3, 5}), randn(rng, {5}), randn(rng, {5})};
               }});
  c.push_back({"sigmoid", [](auto& t, const Vs& x) { return weighted(t, o::sigmoid(x[0])); }, one({3, 4}, 2.0)});
  c.push_back({"swish", [](auto& t, const Vs& x) { return weighted(t, o::swish(x[0])); }, one({3, 4}, 2.0)});
  c.push_back({"relu", [](auto& t, const Vs& x) { return weighted(t, o::relu(x[0])); }, one({3, 4})});
  c.push_back({"glu", [](auto& t, const Vs& x) { return weighted(t, o::glu(x[0])); }, one({3, 6})});
  c.push_back({"slice_rows", [](auto& t, const Vs& x) { return weighted(t, o::slice_rows(x[0], 1, 3)); }, one({4, 3})});
  c.push_back({"slice_cols", [](auto& t, const Vs& x) { return weighted(t, o::slice_cols(x[0], 1, 3)); }, one({4, 3})});
  c.push_back({"concat_cols",
               [](auto& t, const Vs& x) { return weighted(t, o::concat_cols(std::span<const V>(x))); },
               two({3, 2}, {3, 4})});
  c.push_back({"frame_stack", [](auto& t, const Vs& x) { return weighted(t, o::frame_stack(x[0], 3, 2)); }, one({9, 2})});
  c.push_back({"embedding",
               [](auto& t, const Vs& x) {
                 const std::vector<int> ids{2, 0, 2, 1};
                 return weighted(t, o::embedding(x[0], ids));
               },
               one({3, 4})});
  c.push_back({"add_constant",
               [](auto& t, const Vs& x) { return weighted(t, o::add_constant(x[0], Tensor<double>(Shape{2, 2}, {1, -2, 3, 4}))); },
               one({2, 2})});
  c.push_back({"sum", [](auto&, const Vs& x) { return o::sum(o::mul(x[0], x[0])); }, one({3, 2})});
  c.push_back({"dropout",
               [](auto& t, const Vs& x) {
                 std::mt19937_64 mask_rng(9);
                 return weighted(t, o::dropout(x[0], 0.3, mask_rng));
               },
               one({4, 3})});
  c.push_back({"smooth_l1_sum", [](auto&, const Vs& x) { return o::smooth_l1_sum(x[0], x[1]); }, two({4, 3}, {4, 3})});
  return c;
}

}  // namespace streamasr::testing
