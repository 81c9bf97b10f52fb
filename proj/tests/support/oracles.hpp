#pragma once

// Independent reference implementations used only by tests. Nothing here
// shares code with the library beyond the Tensor container.

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "streamasr/numerics/tensor.hpp"

namespace streamasr::testing {

/// Removes repeats, then blanks.
inline std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

/// Probability mass of every collapsed label string, by enumerating all
/// vocab^frames frame-level paths of `logprobs` [frames, vocab].
inline std::map<std::vector<int>, long double> enumerate_collapsed(const Tensor<double>& logprobs, int blank = 0) {
  const std::size_t frames = logprobs.rows(), vocab = logprobs.cols();
  std::map<std::vector<int>, long double> mass;
  std::vector<int> path(frames, 0);
  while (true) {
    long double logp = 0.0L;
    for (std::size_t t = 0; t < frames; ++t) logp += logprobs.at(t, static_cast<std::size_t>(path[t]));
    mass[collapse(path, blank)] += std::exp(logp);
    std::size_t i = 0;
    while (i < frames && ++path[i] == static_cast<int>(vocab)) path[i++] = 0;
    if (i == frames) break;
  }
  return mass;
}

/// -log P(labels) by path enumeration; +inf when no path collapses to labels.
inline double brute_force_ctc(const Tensor<double>& logprobs, const std::vector<int>& labels, int blank = 0) {
  const auto mass = enumerate_collapsed(logprobs, blank);
  const auto it = mass.find(labels);
  if (it == mass.end()) return INFINITY;
  return -static_cast<double>(std::log(it->second));
}

/// Rows of random log-probabilities, logits ~ N(0, scale²).
inline Tensor<double> random_logprobs(std::mt19937_64& rng, std::size_t frames, std::size_t vocab,
                                      double scale = 2.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor<double> out(Shape{frames, vocab});
  for (std::size_t t = 0; t < frames; ++t) {
    double mx = -INFINITY;
    std::vector<double> z(vocab);
    for (auto& v : z) mx = std::max(mx, v = g(rng));
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    for (std::size_t k = 0; k < vocab; ++k) out.at(t, k) = z[k] - mx - std::log(s);
  }
  return out;
}

/// Smoothed cross-entropy of one step, straight from the definition.
inline double smoothed_ce(const std::vector<double>& logits, int target, double eps) {
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const std::size_t V = logits.size();
  double loss = 0.0;
  for (std::size_t k = 0; k < V; ++k) {
    const double q = static_cast<int>(k) == target ? 1.0 - eps : eps / static_cast<double>(V - 1);
    loss -= q * (logits[k] - lse);
  }
  return loss;
}

}  // namespace streamasr::testing
