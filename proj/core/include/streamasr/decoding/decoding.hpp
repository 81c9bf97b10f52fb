#pragma once

#include <map>
#include <span>
#include <vector>

#include "streamasr/model/model.hpp"

namespace streamasr {

struct GreedyResult {
  std::vector<int> tokens;
  /// First frame of each emitted token's argmax run.
  std::vector<std::size_t> spike_frames;
  std::vector<double> spike_logprobs;
};

/// Per-frame argmax, repeats collapsed, blanks dropped.
template <typename T>
GreedyResult greedy_search(const Tensor<T>& logprobs, int blank = 0);

struct Hypothesis {
  std::vector<int> prefix;
  double logp_blank = 0.0;     ///< prefix probability with a trailing blank
  double logp_nonblank = 0.0;  ///< prefix probability ending in its last token
  double s_ctc = 0.0;
  double s_l2r = 0.0;
  double s_r2l = 0.0;
  double s_final = 0.0;
};

double log_add(double a, double b);

/// CTC prefix beam search that can be fed frames incrementally.
class CtcPrefixBeam {
 public:
  explicit CtcPrefixBeam(int beam = 10, int blank = 0);

  template <typename T>
  void advance(const Tensor<T>& logprobs);
  std::size_t frames() const noexcept { return frames_; }
  /// Best `n` prefixes by total probability, best first (ties by prefix order).
  std::vector<Hypothesis> nbest(std::size_t n) const;

 private:
  struct Score {
    double blank, nonblank;
  };
  int beam_, blank_;
  std::size_t frames_ = 0;
  std::map<std::vector<int>, Score> hyps_;
};

template <typename T>
std::vector<Hypothesis> prefix_beam_search(const Tensor<T>& logprobs, int beam = 10, std::size_t nbest = 10,
                                           int blank = 0);

struct RescoreWeights {
  double lambda = 0.3;  ///< CTC weight
  double alpha = 0.3;   ///< R2L weight
};

/// λ·s_ctc + (1−α)·s_l2r + α·s_r2l
double fused_score(double s_ctc, double s_l2r, double s_r2l, const RescoreWeights& w);

/// Index of the best s_final; the earlier candidate wins ties.
std::size_t select_best(std::span<const Hypothesis> nbest);

/// Fills s_l2r, s_r2l and s_final of every candidate against encoder output
/// `memory` and returns the index of the best one.
template <typename T>
std::size_t attention_rescore(const Model<T>& model, const ParameterSet<T>& params, std::span<Hypothesis> nbest,
                              const Tensor<T>& memory, const RescoreWeights& w);

struct PartialResult {
  double audio_ms = 0.0;
  std::vector<int> tokens;
  /// Audio time at which each token first appeared at its position.
  std::vector<double> first_seen_ms;
};

struct DecodeOptions {
  ChunkSpec chunk{4, 24};
  int beam = 10;
  int nbest = 10;
  RescoreWeights weights;
  /// Rescore on the non-streaming top tap instead of the streaming one.
  bool rescore_on_full = false;
};

struct DecodeResult {
  std::vector<PartialResult> partials;
  std::vector<Hypothesis> nbest;  ///< rescored, in first-pass rank order
  std::size_t best = 0;
  GreedyResult bottom_greedy;  ///< over the whole utterance
  GreedyResult top_greedy;
  Tensor<float> bottom_logprobs;
  std::size_t encoder_frames = 0;
  std::size_t top_updates = 0;

  const Hypothesis& final() const { return nbest.at(best); }
};

/// Incremental decode: bottom chunks drive greedy partials, top chunks feed
/// the prefix beam, and the n-best is rescored when the input ends.
template <typename T>
DecodeResult streaming_decode(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& features,
                              const DecodeOptions& options);

/// Same pipeline on full-pass masked encoder outputs.
template <typename T>
DecodeResult offline_decode(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& features,
                            const DecodeOptions& options);

}  // namespace streamasr
