#include "streamasr/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace streamasr::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMatrix<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMatrix<T>>;

template <typename T>
MapM<T> as_matrix(Tensor<T>& t) {
  return MapM<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
CMapM<T> as_matrix(const Tensor<T>& t) {
  return CMapM<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                      " vs " + shape_to_string(b.shape()));
}

template <typename T>
void require_rank2(const Var<T>& a, const char* op) {
  require(a.value().rank() == 2, std::string(op) + ": expected rank-2 operand, got " + shape_to_string(a.shape()));
}

// Applies an elementwise map with derivative df(x, y) written in terms of input and output.
template <typename T, typename F, typename DF>
Var<T> elementwise(Var<T> x, F f, DF df, const char* name) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape().record(
      std::move(out), {x},
      [x, df](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        const Tensor<T>& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i]);
      },
      name);
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  require(a.value().cols() == b.value().rows(),
          "matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  Tensor<T> out(Shape{a.value().rows(), b.value().cols()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
        }
        if (Tensor<T>* gb = tape.accumulator(b)) {
          as_matrix(*gb).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
        }
      },
      "matmul");
}

template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  require_rank2(a, "matmul_bt");
  require_rank2(b, "matmul_bt");
  require(a.value().cols() == b.value().cols(), "matmul_bt: inner dimensions differ");
  Tensor<T> out(Shape{a.value().rows(), b.value().rows()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value()).transpose();
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value());
        }
        if (Tensor<T>* gb = tape.accumulator(b)) {
          as_matrix(*gb).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
        }
      },
      "matmul_bt");
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  require(x.value().cols() == w.value().rows(),
          "linear: input " + shape_to_string(x.shape()) + " does not fit weight " + shape_to_string(w.shape()));
  const std::size_t n = w.value().cols();
  if (bias.valid()) require(bias.value().size() == n, "linear: bias length mismatch");
  Tensor<T> out(Shape{x.value().rows(), n});
  auto om = as_matrix(out);
  om.noalias() = as_matrix(x.value()) * as_matrix(w.value());
  if (bias.valid()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.value().data().data(), static_cast<Eigen::Index>(n));
    om.rowwise() += bv;
  }
  const Var<T> parents[] = {x, w, bias};
  return x.tape().record(
      std::move(out), std::span<const Var<T>>(parents, bias.valid() ? 3 : 2),
      [x, w, bias](Tape<T>& tape, const Tensor<T>& g) {
        auto gm = as_matrix(g);
        if (Tensor<T>* gx = tape.accumulator(x)) {
          as_matrix(*gx).noalias() += gm * as_matrix(w.value()).transpose();
        }
        if (Tensor<T>* gw = tape.accumulator(w)) {
          as_matrix(*gw).noalias() += as_matrix(x.value()).transpose() * gm;
        }
        if (Tensor<T>* gb = tape.accumulator(bias)) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bg(gb->data().data(), static_cast<Eigen::Index>(gb->size()));
          bg += gm.colwise().sum();
        }
      },
      "linear");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        for (const Var<T>& p : {a, b}) {
          if (Tensor<T>* gp = tape.accumulator(p)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
          }
        }
      },
      "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor<T>* gb = tape.accumulator(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        }
      },
      "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(
      std::move(out), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
        }
        if (Tensor<T>* gb = tape.accumulator(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().record(
      std::move(out), {a},
      [a, factor](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
        }
      },
      "scale");
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> b) {
  require_rank2(a, "add_row");
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  require(b.value().size() == cols, "add_row: broadcast length mismatch");
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b.value()[c];
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, rows, cols](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor<T>* gb = tape.accumulator(b)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g.at(r, c);
        }
      },
      "add_row");
}

template <typename T>
Var<T> add_constant(Var<T> a, const Tensor<T>& c) {
  require(a.value().size() == c.size(), "add_constant: shape mismatch");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return a.tape().record(
      std::move(out), {a},
      [a](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
      },
      "add_constant");
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total{0};
  for (T v : a.value().data()) total += v;
  return a.tape().record(
      Tensor<T>::scalar(total), {a},
      [a](Tape<T>& tape, const Tensor<T>& g) {
        if (Tensor<T>* ga = tape.accumulator(a)) {
          for (auto& v : ga->data()) v += g[0];
        }
      },
      "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  if (a.value().empty()) throw ContractError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> log_softmax(Var<T> x, int axis) {
  const Shape& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "log_softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  const Tensor<T>& xv = x.value();
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      T s{0};
      for (std::size_t k = 0; k < n; ++k) s += std::exp(xv[base + k * inner] - mx);
      const T lse = mx + std::log(s);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = xv[base + k * inner] - lse;
    }
  }
  return x.tape().record(
      std::move(out), {x},
      [x, outer, inner, n, self = Var<T>(&x.tape(), x.tape().size())](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        const Tensor<T>& y = self.value();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T gs{0};
            for (std::size_t k = 0; k < n; ++k) gs += g[base + k * inner];
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = base + k * inner;
              (*gx)[i] += g[i] - std::exp(y[i]) * gs;
            }
          }
        }
      },
      "log_softmax");
}

template <typename T>
Var<T> masked_softmax(Var<T> scores, std::span<const std::uint8_t> allowed) {
  require_rank2(scores, "masked_softmax");
  const std::size_t rows = scores.value().rows(), cols = scores.value().cols();
  require(allowed.empty() || allowed.size() == rows * cols, "masked_softmax: mask shape mismatch");
  std::vector<std::uint8_t> mask(allowed.begin(), allowed.end());
  const Tensor<T>& s = scores.value();
  Tensor<T> out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask.empty() || mask[r * cols + c]) mx = std::max(mx, s.at(r, c));
    if (!std::isfinite(mx)) throw ContractError("masked_softmax: row " + std::to_string(r) + " has no allowed entry");
    T z{0};
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask.empty() || mask[r * cols + c]) {
        const T e = std::exp(s.at(r, c) - mx);
        out.at(r, c) = e;
        z += e;
      }
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return scores.tape().record(
      std::move(out), {scores},
      [scores, rows, cols, self = Var<T>(&scores.tape(), scores.tape().size())](Tape<T>& tape,
                                                                                 const Tensor<T>& g) {
        Tensor<T>* gs = tape.accumulator(scores);
        if (!gs) return;
        const Tensor<T>& p = self.value();
        for (std::size_t r = 0; r < rows; ++r) {
          T dot{0};
          for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) gs->at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
        }
      },
      "masked_softmax");
}

template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> kernel, ConvMode mode) {
  require_rank2(x, "depthwise_conv1d");
  require_rank2(kernel, "depthwise_conv1d");
  const std::size_t frames = x.value().rows(), d = x.value().cols(), k = kernel.value().rows();
  require(kernel.value().cols() == d, "depthwise_conv1d: kernel channels mismatch");
  if (k == 0) throw ConfigError("depthwise_conv1d: empty kernel");
  if (mode == ConvMode::centered && k % 2 == 0) {
    throw ConfigError("depthwise_conv1d: centered mode needs an odd kernel, got " + std::to_string(k));
  }
  // output[t] = sum_j kernel[j] * x[t - left + j]
  const std::ptrdiff_t left = mode == ConvMode::causal ? static_cast<std::ptrdiff_t>(k - 1)
                                                       : static_cast<std::ptrdiff_t>((k - 1) / 2);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& kv = kernel.value();
  Tensor<T> out(Shape{frames, d});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - left + static_cast<std::ptrdiff_t>(j);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      const T* xr = &xv[static_cast<std::size_t>(src) * d];
      const T* kr = &kv[j * d];
      T* orow = &out[t * d];
      for (std::size_t c = 0; c < d; ++c) orow[c] += kr[c] * xr[c];
    }
  }
  return x.tape().record(
      std::move(out), {x, kernel},
      [x, kernel, frames, d, k, left](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        Tensor<T>* gk = tape.accumulator(kernel);
        const Tensor<T>& xv = x.value();
        const Tensor<T>& kv = kernel.value();
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - left + static_cast<std::ptrdiff_t>(j);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
            const std::size_t s = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < d; ++c) {
              const T gv = g[t * d + c];
              if (gx) (*gx)[s * d + c] += gv * kv[j * d + c];
              if (gk) (*gk)[j * d + c] += gv * xv[s * d + c];
            }
          }
        }
      },
      "depthwise_conv1d");
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Tensor<T>& xv = x.value();
  require(xv.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = xv.shape().back();
  require(gamma.value().size() == d && beta.value().size() == d, "layer_norm: affine parameter length mismatch");
  const std::size_t rows = xv.size() / d;
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = &xv[r * d];
    T mu{0};
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mu) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tape,
                                                                                     const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        Tensor<T>* gg = tape.accumulator(gamma);
        Tensor<T>* gb = tape.accumulator(beta);
        const Tensor<T>& gam = gamma.value();
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_gh{0}, sum_ghx{0};
          for (std::size_t c = 0; c < d; ++c) {
            const T gi = g[r * d + c];
            const T h = xhat[r * d + c];
            if (gg) (*gg)[c] += gi * h;
            if (gb) (*gb)[c] += gi;
            const T gh = gi * gam[c];
            sum_gh += gh;
            sum_ghx += gh * h;
          }
          if (!gx) continue;
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const T gh = g[r * d + c] * gam[c];
            const T h = xhat[r * d + c];
            (*gx)[r * d + c] += inv_std[r] * (gh - inv_d * sum_gh - h * inv_d * sum_ghx);
          }
        }
      },
      "layer_norm");
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return elementwise(
      x, [](T v) { return sigmoid_scalar(v); },
      [](T v) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) - s);
      },
      "sigmoid");
}

template <typename T>
Var<T> swish(Var<T> x) {
  return elementwise(
      x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v) {
        const T s = sigmoid_scalar(v);
        return s + v * s * (T(1) - s);
      },
      "swish");
}

template <typename T>
Var<T> relu(Var<T> x) {
  return elementwise(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v) { return v > 0 ? T(1) : T(0); }, "relu");
}

template <typename T>
Var<T> glu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require(xv.rank() >= 1, "glu: scalar input");
  const std::size_t width = xv.shape().back();
  if (width % 2 != 0) throw DimensionError("glu: last axis must be even, got " + std::to_string(width));
  const std::size_t half = width / 2, rows = xv.size() / width;
  Shape out_shape = xv.shape();
  out_shape.back() = half;
  Tensor<T> out(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < half; ++c)
      out[r * half + c] = xv[r * width + c] * sigmoid_scalar(xv[r * width + half + c]);
  return x.tape().record(
      std::move(out), {x},
      [x, half, rows, width](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        const Tensor<T>& xv = x.value();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < half; ++c) {
            const T a = xv[r * width + c];
            const T s = sigmoid_scalar(xv[r * width + half + c]);
            const T gi = g[r * half + c];
            (*gx)[r * width + c] += gi * s;
            (*gx)[r * width + half + c] += gi * a * s * (T(1) - s);
          }
        }
      },
      "glu");
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  require(begin <= end && end <= x.value().rows(), "slice_rows: range out of bounds");
  const std::size_t cols = x.value().cols();
  const auto src = x.value().data();
  Tensor<T> out(Shape{end - begin, cols},
                std::vector<T>(src.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                               src.begin() + static_cast<std::ptrdiff_t>(end * cols)));
  return x.tape().record(
      std::move(out), {x},
      [x, begin, cols](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[begin * cols + i] += g[i];
      },
      "slice_rows");
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  require(begin <= end && end <= x.value().cols(), "slice_cols: range out of bounds");
  const std::size_t rows = x.value().rows(), cols = x.value().cols(), w = end - begin;
  Tensor<T> out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(&x.value()[r * cols + begin], w, &out[r * w]);
  return x.tape().record(
      std::move(out), {x},
      [x, begin, rows, cols, w](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) (*gx)[r * cols + begin + c] += g[r * w + c];
      },
      "slice_cols");
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    require(p.value().rows() == rows, "concat_cols: row count mismatch");
    total += p.value().cols();
  }
  Tensor<T> out(Shape{rows, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(&p.value()[r * w], w, &out[r * total + offset]);
    offset += w;
  }
  std::vector<Var<T>> saved(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), parts,
      [saved, rows, total](Tape<T>& tape, const Tensor<T>& g) {
        std::size_t offset = 0;
        for (const auto& p : saved) {
          const std::size_t w = p.value().cols();
          if (Tensor<T>* gp = tape.accumulator(p)) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < w; ++c) (*gp)[r * w + c] += g[r * total + offset + c];
          }
          offset += w;
        }
      },
      "concat_cols");
}

template <typename T>
Var<T> frame_stack(Var<T> x, std::size_t kernel, std::size_t stride) {
  require_rank2(x, "frame_stack");
  const std::size_t frames = x.value().rows(), c = x.value().cols();
  if (kernel == 0 || stride == 0) throw ConfigError("frame_stack: kernel and stride must be positive");
  if (frames < kernel) {
    throw DimensionError("frame_stack: " + std::to_string(frames) + " frames shorter than kernel " +
                         std::to_string(kernel));
  }
  const std::size_t out_frames = (frames - kernel) / stride + 1, w = kernel * c;
  Tensor<T> out(Shape{out_frames, w});
  for (std::size_t t = 0; t < out_frames; ++t)
    std::copy_n(&x.value()[t * stride * c], w, &out[t * w]);
  return x.tape().record(
      std::move(out), {x},
      [x, out_frames, stride, c, w](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gx = tape.accumulator(x);
        if (!gx) return;
        for (std::size_t t = 0; t < out_frames; ++t)
          for (std::size_t i = 0; i < w; ++i) (*gx)[t * stride * c + i] += g[t * w + i];
      },
      "frame_stack");
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.value().rows(), d = table.value().cols();
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor<T> out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(idx[i]) + " outside vocabulary");
    }
    std::copy_n(&table.value()[static_cast<std::size_t>(idx[i]) * d], d, &out[i * d]);
  }
  return table.tape().record(
      std::move(out), {table},
      [table, idx = std::move(idx), d](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gt = tape.accumulator(table);
        if (!gt) return;
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) (*gt)[static_cast<std::size_t>(idx[i]) * d + c] += g[i * d + c];
      },
      "embedding");
}

template <typename T>
Var<T> smooth_l1_sum(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "smooth_l1_sum");
  T total{0};
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const T r = a.value()[i] - b.value()[i];
    total += std::abs(r) < T(1) ? T(0.5) * r * r : std::abs(r) - T(0.5);
  }
  return a.tape().record(
      Tensor<T>::scalar(total), {a, b},
      [a, b](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* ga = tape.accumulator(a);
        Tensor<T>* gb = tape.accumulator(b);
        for (std::size_t i = 0; i < a.value().size(); ++i) {
          const T r = a.value()[i] - b.value()[i];
          const T d = std::abs(r) < T(1) ? r : (r > 0 ? T(1) : T(-1));
          if (ga) (*ga)[i] += g[0] * d;
          if (gb) (*gb)[i] -= g[0] * d;
        }
      },
      "smooth_l1_sum");
}

template <typename T>
Var<T> stop_gradient(Var<T> x) {
  return x.tape().constant(x.value());
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const T factor = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.data()) m = keep(rng) ? factor : T(0);
  return mul(x, x.tape().constant(std::move(mask)));
}

#define STREAMASR_INSTANTIATE_OPS(T)                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                              \
  template Var<T> matmul_bt(Var<T>, Var<T>);                                           \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> sub(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> add_row(Var<T>, Var<T>);                                             \
  template Var<T> add_constant(Var<T>, const Tensor<T>&);                              \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> mean(Var<T>);                                                        \
  template Var<T> log_softmax(Var<T>, int);                                            \
  template Var<T> masked_softmax(Var<T>, std::span<const std::uint8_t>);               \
  template Var<T> depthwise_conv1d(Var<T>, Var<T>, ConvMode);                          \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                               \
  template Var<T> sigmoid(Var<T>);                                                     \
  template Var<T> swish(Var<T>);                                                       \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> glu(Var<T>);                                                         \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> concat_cols(std::span<const Var<T>>);                                \
  template Var<T> frame_stack(Var<T>, std::size_t, std::size_t);                       \
  template Var<T> embedding(Var<T>, std::span<const int>);                             \
  template Var<T> smooth_l1_sum(Var<T>, Var<T>);                                       \
  template Var<T> stop_gradient(Var<T>);                                               \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&);

STREAMASR_INSTANTIATE_OPS(float)
STREAMASR_INSTANTIATE_OPS(double)

}  // namespace streamasr::ops
