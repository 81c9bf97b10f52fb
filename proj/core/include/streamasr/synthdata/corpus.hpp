#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streamasr/numerics/tensor.hpp"

namespace streamasr {

enum class Split { train, dev, test };

Split parse_split(std::string_view text);
std::string_view to_string(Split split);

/// Ground-truth extent of one reference token, in milliseconds.
struct TokenSpan {
  double start_ms = 0.0;
  double end_ms = 0.0;
  bool operator==(const TokenSpan&) const = default;
};

struct Utterance {
  std::string id;
  Split split = Split::train;
  Tensor<float> features;  ///< [frames, feat_dim], one row per frame shift
  std::vector<int> tokens;
  std::vector<TokenSpan> spans;
  int frame_shift_ms = 10;

  std::size_t frames() const { return features.rows(); }
  double duration_ms() const { return static_cast<double>(frames()) * frame_shift_ms; }
  /// Throws ContractError when spans are unordered, overlapping, out of range or tokens are empty.
  void validate() const;
};

struct SynthParams {
  int vocab_size = 16;  ///< blank 0 and sos/eos vocab_size-1 never appear as tokens
  int feat_dim = 16;
  int frame_shift_ms = 10;
  int min_tokens = 3;
  int max_tokens = 8;
  int min_token_frames = 8;
  int max_token_frames = 16;
  int min_gap_frames = 2;
  int max_gap_frames = 6;
  int min_edge_frames = 10;  ///< leading/trailing silence
  int max_edge_frames = 30;
  double snr_db = 10.0;
  /// Leading fraction of each token whose identity is attenuated to
  /// onset_level; the rest carries the full identity amplitude.
  double onset_fraction = 0.4;
  double onset_level = 0.05;
  /// Relative sampling weights of tokens 1..vocab_size-2; empty means uniform.
  std::vector<double> unigram;
  /// Probability that a token is followed by its fixed successor instead of
  /// a fresh unigram draw. With a uniform unigram the token marginals stay uniform.
  double bigram_strength = 0.0;

  void validate() const;
  int token_count() const noexcept { return vocab_size - 2; }
  /// Normalized unigram distribution over tokens 1..vocab_size-2.
  std::vector<double> token_distribution() const;
};

/// Per-token feature templates derived from a seed.
class TokenInventory {
 public:
  TokenInventory(const SynthParams& params, std::uint64_t seed);

  /// Template [duration, feat_dim] of token `token` (1-based, excludes blank).
  const Tensor<float>& pattern(int token) const;
  /// Unit direction identifying `token`.
  std::span<const float> direction(int token) const;
  /// Mean power of a template frame, used to scale noise for the SNR.
  double signal_power() const noexcept { return signal_power_; }
  /// Preferred next token of `token` (a fixed derangement of the tokens).
  int successor(int token) const;

 private:
  std::vector<int> successor_;
  std::vector<Tensor<float>> patterns_;
  std::vector<std::vector<float>> directions_;
  double signal_power_ = 0.0;
};

/// Lays out silence, token templates separated by short gaps, trailing
/// silence, then adds white noise at the configured SNR.
Utterance render_utterance(std::mt19937_64& rng, const TokenInventory& inventory, std::span<const int> tokens,
                           const SynthParams& params, std::string id = "utt", Split split = Split::train);

struct Corpus {
  std::uint64_t seed = 0;
  SynthParams params;
  std::vector<Utterance> train, dev, test;

  const std::vector<Utterance>& split(Split s) const;
  std::vector<Utterance>& split(Split s);
};

/// Draws a token sequence of length `n` from the unigram / successor model.
std::vector<int> sample_tokens(std::mt19937_64& rng, const TokenInventory& inventory, const SynthParams& params, int n);

/// Deterministic corpus: every utterance derives its own seed from (seed, split, index);
/// token sequences never repeat across splits.
Corpus generate_corpus(std::uint64_t seed, int n_train, int n_dev, int n_test, const SynthParams& params);

/// Stable 64-bit mixer used to derive per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace streamasr
