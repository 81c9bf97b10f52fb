#include "streamasr/synthdata/corpus.hpp"

#include <cmath>
#include <algorithm>
#include <map>
#include <numbers>
#include <string>

#include "streamasr/errors.hpp"

namespace streamasr {

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "dev") return Split::dev;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void Utterance::validate() const {
  if (tokens.empty()) throw ContractError("utterance " + id + ": no tokens");
  if (spans.size() != tokens.size()) throw ContractError("utterance " + id + ": span count differs from token count");
  double prev_end = 0.0;
  for (const auto& s : spans) {
    if (s.start_ms < prev_end || s.end_ms <= s.start_ms || s.end_ms > duration_ms()) {
      throw ContractError("utterance " + id + ": token spans must be ordered, disjoint and inside the audio");
    }
    prev_end = s.end_ms;
  }
}

void SynthParams::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synthetic data: " + what); };
  if (vocab_size < 3) fail("vocab_size must leave at least one real token besides blank and sos/eos");
  if (feat_dim < 1 || frame_shift_ms < 1) fail("feat_dim and frame_shift_ms must be positive");
  if (min_tokens < 1 || max_tokens < min_tokens) fail("token count range is invalid");
  if (min_token_frames < 1 || max_token_frames < min_token_frames) fail("token duration range is invalid");
  if (min_gap_frames < 0 || max_gap_frames < min_gap_frames) fail("gap range is invalid");
  if (min_edge_frames < 0 || max_edge_frames < min_edge_frames) fail("edge silence range is invalid");
  if (onset_fraction < 0.0 || onset_fraction >= 1.0) fail("onset_fraction must lie in [0, 1)");
  if (onset_level <= 0.0 || onset_level > 1.0) fail("onset_level must lie in (0, 1]");
  if (!unigram.empty() && unigram.size() != static_cast<std::size_t>(token_count())) {
    fail("unigram needs one weight per token (" + std::to_string(token_count()) + ")");
  }
  for (double w : unigram)
    if (!(w >= 0.0)) fail("unigram weights must be non-negative");
  if (bigram_strength < 0.0 || bigram_strength > 1.0) fail("bigram_strength must lie in [0, 1]");
}

std::vector<double> SynthParams::token_distribution() const {
  std::vector<double> w = unigram.empty() ? std::vector<double>(static_cast<std::size_t>(token_count()), 1.0) : unigram;
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0) throw ConfigError("synthetic data: unigram weights sum to zero");
  for (double& v : w) v /= total;
  return w;
}

TokenInventory::TokenInventory(const SynthParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x1fe17));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto dim = static_cast<std::size_t>(params.feat_dim);
  const std::size_t n_dirs = static_cast<std::size_t>(params.token_count()) + 1;  // last one is shared energy
  const bool orthogonal = dim >= n_dirs;

  std::vector<std::vector<double>> basis;
  for (std::size_t k = 0; k < n_dirs; ++k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(rng);
    if (orthogonal) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * b[i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }

  constexpr double kIdentity = 2.0;  // amplitude along the token direction
  constexpr double kEnergy = 1.0;    // amplitude along the shared direction
  std::uniform_int_distribution<int> duration(params.min_token_frames, params.max_token_frames);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  double power_sum = 0.0;
  std::size_t power_frames = 0;
  const auto& shared = basis.back();
  for (int k = 0; k < params.token_count(); ++k) {
    const int frames = duration(rng);
    const double phi = phase(rng);
    const auto& u = basis[static_cast<std::size_t>(k)];
    Tensor<float> pat(Shape{static_cast<std::size_t>(frames), dim});
    for (int f = 0; f < frames; ++f) {
      const double level = f < params.onset_fraction * frames ? params.onset_level : 1.0;
      const double a = kIdentity * level * (1.0 + 0.15 * std::sin(2.0 * std::numbers::pi * f / frames + phi));
      double power = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double x = a * u[i] + kEnergy * shared[i];
        pat.at(static_cast<std::size_t>(f), i) = static_cast<float>(x);
        power += x * x;
      }
      power_sum += power;
      ++power_frames;
    }
    patterns_.push_back(std::move(pat));
    directions_.emplace_back(u.begin(), u.end());
  }
  signal_power_ = power_sum / static_cast<double>(power_frames);

  // cyclic shift of a random order: no token is its own successor
  std::vector<int> order(static_cast<std::size_t>(params.token_count()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i) + 1;
  std::shuffle(order.begin(), order.end(), rng);
  successor_.assign(order.size() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    successor_[static_cast<std::size_t>(order[i])] = order[(i + 1) % order.size()];
  }
}

int TokenInventory::successor(int token) const {
  if (token < 1 || static_cast<std::size_t>(token) >= successor_.size()) {
    throw ContractError("token " + std::to_string(token) + " has no successor");
  }
  return successor_[static_cast<std::size_t>(token)];
}

std::vector<int> sample_tokens(std::mt19937_64& rng, const TokenInventory& inventory, const SynthParams& params, int n) {
  const std::vector<double> dist = params.token_distribution();
  std::discrete_distribution<int> pick(dist.begin(), dist.end());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<int> tokens;
  for (int k = 0; k < n; ++k) {
    if (k > 0 && params.bigram_strength > 0.0 && coin(rng) < params.bigram_strength) {
      tokens.push_back(inventory.successor(tokens.back()));
    } else {
      tokens.push_back(pick(rng) + 1);
    }
  }
  return tokens;
}

const Tensor<float>& TokenInventory::pattern(int token) const {
  if (token < 1 || static_cast<std::size_t>(token) > patterns_.size()) {
    throw ContractError("token " + std::to_string(token) + " has no template");
  }
  return patterns_[static_cast<std::size_t>(token - 1)];
}

std::span<const float> TokenInventory::direction(int token) const {
  if (token < 1 || static_cast<std::size_t>(token) > directions_.size()) {
    throw ContractError("token " + std::to_string(token) + " has no template");
  }
  return directions_[static_cast<std::size_t>(token - 1)];
}

Utterance render_utterance(std::mt19937_64& rng, const TokenInventory& inventory, std::span<const int> tokens,
                           const SynthParams& params, std::string id, Split split) {
  if (tokens.empty()) throw ContractError("render_utterance: empty token list");
  std::uniform_int_distribution<int> edge(params.min_edge_frames, params.max_edge_frames);
  std::uniform_int_distribution<int> gap(params.min_gap_frames, params.max_gap_frames);

  std::vector<int> starts;
  int cursor = edge(rng);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) cursor += gap(rng);
    starts.push_back(cursor);
    cursor += static_cast<int>(inventory.pattern(tokens[i]).rows());
  }
  const int total = cursor + edge(rng);
  const auto dim = static_cast<std::size_t>(params.feat_dim);

  Utterance u;
  u.id = std::move(id);
  u.split = split;
  u.frame_shift_ms = params.frame_shift_ms;
  u.tokens.assign(tokens.begin(), tokens.end());
  u.features = Tensor<float>(Shape{static_cast<std::size_t>(total), dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor<float>& pat = inventory.pattern(tokens[i]);
    for (std::size_t f = 0; f < pat.rows(); ++f)
      for (std::size_t c = 0; c < dim; ++c) u.features.at(static_cast<std::size_t>(starts[i]) + f, c) = pat.at(f, c);
    u.spans.push_back({static_cast<double>(starts[i]) * params.frame_shift_ms,
                       static_cast<double>(starts[i] + static_cast<int>(pat.rows())) * params.frame_shift_ms});
  }
  if (std::isfinite(params.snr_db)) {
    const double noise_power = inventory.signal_power() / std::pow(10.0, params.snr_db / 10.0);
    std::normal_distribution<double> noise(0.0, std::sqrt(noise_power / static_cast<double>(dim)));
    for (auto& v : u.features.data()) v += static_cast<float>(noise(rng));
  }
  u.validate();
  return u;
}

const std::vector<Utterance>& Corpus::split(Split s) const {
  return s == Split::train ? train : (s == Split::dev ? dev : test);
}

std::vector<Utterance>& Corpus::split(Split s) {
  return s == Split::train ? train : (s == Split::dev ? dev : test);
}

Corpus generate_corpus(std::uint64_t seed, int n_train, int n_dev, int n_test, const SynthParams& params) {
  params.validate();
  if (n_train < 0 || n_dev < 0 || n_test < 0) throw ConfigError("corpus sizes must be non-negative");
  Corpus corpus;
  corpus.seed = seed;
  corpus.params = params;
  const TokenInventory inventory(params, seed);
  std::map<std::vector<int>, Split> owner;

  const std::pair<Split, int> plan[] = {{Split::train, n_train}, {Split::dev, n_dev}, {Split::test, n_test}};
  for (const auto& [split, count] : plan) {
    auto& out = corpus.split(split);
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(split) + 1), static_cast<std::uint64_t>(i)));
      std::uniform_int_distribution<int> length(params.min_tokens, params.max_tokens);
      std::vector<int> tokens;
      for (int attempt = 0;; ++attempt) {
        tokens = sample_tokens(rng, inventory, params, length(rng));
        auto it = owner.find(tokens);
        if (it == owner.end() || it->second == split) break;
        if (attempt > 1000) throw ConfigError("synthetic data: cannot keep splits disjoint with this vocabulary");
      }
      owner.emplace(tokens, split);
      std::string id = std::string(to_string(split)) + "_" + std::to_string(i);
      out.push_back(render_utterance(rng, inventory, tokens, params, std::move(id), split));
    }
  }
  return corpus;
}

}  // namespace streamasr
