#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "streamasr/model/model.hpp"

namespace streamasr {

enum class DistillVariant {
  d1,  ///< last bottom layer vs last top layer
  d2,  ///< d1 plus the second-to-last pair
};

DistillVariant parse_distill_variant(std::string_view text);
std::string_view to_string(DistillVariant variant);

struct LossWeights {
  double lambda = 0.3;  ///< CTC weight
  double alpha = 0.3;   ///< R2L weight inside the attention loss
  double beta = 0.02;   ///< distillation weight (stage 2)
  double label_smoothing = 0.01;
  DistillVariant distill_variant = DistillVariant::d1;
  /// Include the non-streaming top-tap term in the joint loss.
  bool use_nonstreaming_loss = true;

  void validate() const;
};

/// Coefficients of (ctc, l2r, r2l) in λ·ctc + (1−λ)·[(1−α)·l2r + α·r2l].
struct AsrCoefficients {
  double ctc, l2r, r2l;
};
AsrCoefficients asr_coefficients(const LossWeights& w);
double combine_asr(double ctc, double l2r, double r2l, const LossWeights& w);

/// Minimum frame count CTC needs for `labels`: |labels| plus one blank per adjacent repeat.
std::size_t ctc_min_frames(std::span<const int> labels);

/// -log Σ over alignments collapsing to `labels`, log-space forward recursion.
/// Throws InfeasibleAlignment when the labels cannot fit the frames.
template <typename T>
double ctc_negative_log_likelihood(const Tensor<T>& logprobs, std::span<const int> labels, int blank = 0);

/// Differentiable CTC loss on frame log-probabilities [frames, vocab].
template <typename T>
Var<T> ctc_loss(Var<T> logprobs, std::span<const int> labels, int blank = 0);

/// Mean over steps of cross-entropy against the smoothed target distribution
/// (1−ε on the target, ε/(V−1) elsewhere). `logits` is [steps, vocab].
template <typename T>
Var<T> aed_loss(Var<T> logits, std::span<const int> targets, double label_smoothing);

template <typename T>
struct AsrLossTerms {
  Var<T> total, ctc, l2r, r2l;
};

/// λ·CTC + (1−λ)·[(1−α)·L2R + α·R2L] on one tap.
template <typename T>
AsrLossTerms<T> asr_loss(const Model<T>& model, BoundParameters<T>& p, Var<T> tap, CtcTap head,
                         std::span<const int> labels, const LossWeights& w);

template <typename T>
struct JointLossTerms {
  Var<T> total;
  AsrLossTerms<T> streaming_bottom, streaming_top, full_top;
};

/// L_asr(x_s_l) + L_asr(x_s_h) + L_asr(x_ns_h); the last term is dropped when
/// use_nonstreaming_loss is off.
template <typename T>
JointLossTerms<T> joint_loss(const Model<T>& model, BoundParameters<T>& p, const EncoderOutputs<T>& enc,
                             std::span<const int> labels, const LossWeights& w);

/// Σ smooth-L1(student − teacher) / frames between streaming bottom-block and
/// non-streaming top-block outputs. Teacher values are constants.
template <typename T>
Var<T> distill_loss(const EncoderOutputs<T>& enc, DistillVariant variant);

template <typename T>
struct Stage2LossTerms {
  Var<T> total;
  JointLossTerms<T> joint;
  Var<T> distill;
};

/// joint_loss + β · distill_loss.
template <typename T>
Stage2LossTerms<T> stage2_loss(const Model<T>& model, BoundParameters<T>& p, const EncoderOutputs<T>& enc,
                               std::span<const int> labels, const LossWeights& w);

}  // namespace streamasr
