#include "streamasr/losses/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "streamasr/errors.hpp"

namespace streamasr {

namespace o = ops;

DistillVariant parse_distill_variant(std::string_view text) {
  if (text == "D1" || text == "d1") return DistillVariant::d1;
  if (text == "D2" || text == "d2") return DistillVariant::d2;
  throw ConfigError("unknown distillation variant '" + std::string(text) + "' (expected D1 or D2)");
}

std::string_view to_string(DistillVariant variant) { return variant == DistillVariant::d1 ? "D1" : "D2"; }

void LossWeights::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("loss weights: lambda must lie in [0, 1]");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("loss weights: alpha must lie in [0, 1]");
  if (beta < 0.0) throw ConfigError("loss weights: beta must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("loss weights: label_smoothing must lie in [0, 1)");
}

AsrCoefficients asr_coefficients(const LossWeights& w) {
  return {w.lambda, (1.0 - w.lambda) * (1.0 - w.alpha), (1.0 - w.lambda) * w.alpha};
}

double combine_asr(double ctc, double l2r, double r2l, const LossWeights& w) {
  const auto c = asr_coefficients(w);
  return c.ctc * ctc + c.l2r * l2r + c.r2l * r2l;
}

std::size_t ctc_min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct CtcLattice {
  std::vector<int> ext;          // blank-augmented labels
  std::vector<double> alpha;     // [frames, states], includes emission at t
  std::vector<double> beta;      // [frames, states], excludes emission at t
  double log_likelihood = kNegInf;
};

template <typename T>
CtcLattice ctc_lattice(const Tensor<T>& lp, std::span<const int> labels, int blank, bool with_beta) {
  if (lp.rank() != 2) throw DimensionError("ctc: log-probabilities must be [frames, vocab]");
  const std::size_t frames = lp.rows(), vocab = lp.cols();
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= vocab || l == blank) {
      throw ContractError("ctc: label " + std::to_string(l) + " is blank or outside the vocabulary");
    }
  }
  if (frames == 0 || ctc_min_frames(labels) > frames) {
    throw InfeasibleAlignment("ctc: " + std::to_string(labels.size()) + " labels need " +
                              std::to_string(ctc_min_frames(labels)) + " frames, only " + std::to_string(frames) +
                              " available");
  }
  CtcLattice lat;
  lat.ext.reserve(2 * labels.size() + 1);
  lat.ext.push_back(blank);
  for (int l : labels) {
    lat.ext.push_back(l);
    lat.ext.push_back(blank);
  }
  const std::size_t states = lat.ext.size();
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && lat.ext[s] != blank && lat.ext[s] != lat.ext[s - 2]; };
  auto emit = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp.at(t, static_cast<std::size_t>(lat.ext[s]))); };

  lat.alpha.assign(frames * states, kNegInf);
  lat.alpha[0] = emit(0, 0);
  if (states > 1) lat.alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = &lat.alpha[(t - 1) * states];
    double* cur = &lat.alpha[t * states];
    for (std::size_t s = 0; s < states; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (skip_allowed(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + emit(t, s);
    }
  }
  const double* last = &lat.alpha[(frames - 1) * states];
  lat.log_likelihood = states > 1 ? log_add(last[states - 1], last[states - 2]) : last[0];

  if (with_beta) {
    lat.beta.assign(frames * states, kNegInf);
    double* end = &lat.beta[(frames - 1) * states];
    end[states - 1] = 0.0;
    if (states > 1) end[states - 2] = 0.0;
    for (std::size_t t = frames - 1; t-- > 0;) {
      const double* next = &lat.beta[(t + 1) * states];
      double* cur = &lat.beta[t * states];
      for (std::size_t s = 0; s < states; ++s) {
        double acc = next[s] == kNegInf ? kNegInf : next[s] + emit(t + 1, s);
        if (s + 1 < states && next[s + 1] != kNegInf) acc = log_add(acc, next[s + 1] + emit(t + 1, s + 1));
        if (s + 2 < states && skip_allowed(s + 2) && next[s + 2] != kNegInf) {
          acc = log_add(acc, next[s + 2] + emit(t + 1, s + 2));
        }
        cur[s] = acc;
      }
    }
  }
  return lat;
}

}  // namespace

template <typename T>
double ctc_negative_log_likelihood(const Tensor<T>& logprobs, std::span<const int> labels, int blank) {
  const CtcLattice lat = ctc_lattice(logprobs, labels, blank, false);
  if (lat.log_likelihood == kNegInf) throw InfeasibleAlignment("ctc: labels have zero probability");
  return -lat.log_likelihood;
}

template <typename T>
Var<T> ctc_loss(Var<T> logprobs, std::span<const int> labels, int blank) {
  CtcLattice lat = ctc_lattice(logprobs.value(), labels, blank, logprobs.requires_grad());
  if (lat.log_likelihood == kNegInf) throw InfeasibleAlignment("ctc: labels have zero probability");
  const double nll = -lat.log_likelihood;
  return logprobs.tape().record(
      Tensor<T>::scalar(static_cast<T>(nll)), {logprobs},
      [logprobs, lat = std::move(lat)](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>* gl = tape.accumulator(logprobs);
        if (!gl) return;
        const std::size_t frames = logprobs.value().rows(), vocab = logprobs.value().cols();
        const std::size_t states = lat.ext.size();
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t s = 0; s < states; ++s) {
            const double a = lat.alpha[t * states + s], b = lat.beta[t * states + s];
            if (a == kNegInf || b == kNegInf) continue;
            const double occupancy = std::exp(a + b - lat.log_likelihood);
            (*gl)[t * vocab + static_cast<std::size_t>(lat.ext[s])] -= static_cast<T>(occupancy) * g[0];
          }
        }
      },
      "ctc_loss");
}

template <typename T>
Var<T> aed_loss(Var<T> logits, std::span<const int> targets, double label_smoothing) {
  if (logits.value().rank() != 2) throw DimensionError("aed_loss: logits must be [steps, vocab]");
  const std::size_t steps = logits.value().rows(), vocab = logits.value().cols();
  if (steps != targets.size()) {
    throw DimensionError("aed_loss: " + std::to_string(steps) + " steps but " + std::to_string(targets.size()) +
                         " targets");
  }
  if (vocab < 2) throw DimensionError("aed_loss: vocabulary must have at least two entries");
  const double off = label_smoothing / static_cast<double>(vocab - 1);
  const double on = 1.0 - label_smoothing;
  Tensor<T> weights(Shape{steps, vocab}, static_cast<T>(-off / static_cast<double>(steps)));
  for (std::size_t t = 0; t < steps; ++t) {
    const int y = targets[t];
    if (y < 0 || static_cast<std::size_t>(y) >= vocab) throw DimensionError("aed_loss: target outside vocabulary");
    weights.at(t, static_cast<std::size_t>(y)) = static_cast<T>(-on / static_cast<double>(steps));
  }
  Var<T> lp = o::log_softmax(logits, -1);
  return o::sum(o::mul(lp, logits.tape().constant(std::move(weights))));
}

template <typename T>
AsrLossTerms<T> asr_loss(const Model<T>& model, BoundParameters<T>& p, Var<T> tap, CtcTap head,
                         std::span<const int> labels, const LossWeights& w) {
  AsrLossTerms<T> terms;
  const auto c = asr_coefficients(w);
  terms.ctc = ctc_loss(model.ctc_logprobs(p, tap, head), labels, model.config().blank());
  if (c.l2r != 0.0 || c.r2l != 0.0) {
    terms.l2r = aed_loss(model.decoder_logits(p, tap, labels, Direction::l2r),
                         model.decoder_targets(labels, Direction::l2r), w.label_smoothing);
  }
  if (c.r2l != 0.0) {
    terms.r2l = aed_loss(model.decoder_logits(p, tap, labels, Direction::r2l),
                         model.decoder_targets(labels, Direction::r2l), w.label_smoothing);
  }
  Var<T> acc = c.ctc != 0.0 ? o::scale(terms.ctc, static_cast<T>(c.ctc)) : Var<T>();
  auto add_term = [&](Var<T> v, double coef) {
    if (coef == 0.0 || !v.valid()) return;
    Var<T> scaled = o::scale(v, static_cast<T>(coef));
    acc = acc.valid() ? o::add(acc, scaled) : scaled;
  };
  add_term(terms.l2r, c.l2r);
  add_term(terms.r2l, c.r2l);
  terms.total = acc.valid() ? acc : o::scale(terms.ctc, T(0));
  return terms;
}

template <typename T>
JointLossTerms<T> joint_loss(const Model<T>& model, BoundParameters<T>& p, const EncoderOutputs<T>& enc,
                             std::span<const int> labels, const LossWeights& w) {
  if (!enc.has_streaming()) throw ContractError("joint_loss: streaming pass missing");
  if (w.use_nonstreaming_loss && !enc.has_full()) throw ContractError("joint_loss: non-streaming pass missing");
  JointLossTerms<T> j;
  j.streaming_bottom = asr_loss(model, p, enc.x_s_l, CtcTap::bottom_streaming, labels, w);
  j.streaming_top = asr_loss(model, p, enc.x_s_h, CtcTap::top_streaming, labels, w);
  j.total = o::add(j.streaming_bottom.total, j.streaming_top.total);
  if (w.use_nonstreaming_loss) {
    j.full_top = asr_loss(model, p, enc.x_ns_h, CtcTap::top_full, labels, w);
    j.total = o::add(j.total, j.full_top.total);
  }
  return j;
}

template <typename T>
Var<T> distill_loss(const EncoderOutputs<T>& enc, DistillVariant variant) {
  if (!enc.has_streaming() || !enc.has_full()) throw ContractError("distill_loss: needs both encoder passes");
  const auto& s = enc.streaming_layers;
  const auto& f = enc.full_layers;
  const std::size_t pairs = variant == DistillVariant::d1 ? 1 : 2;
  const std::size_t bottom_end = enc.bottom_layers;
  if (bottom_end < pairs || s.size() - bottom_end < pairs || f.size() != s.size()) {
    throw ContractError("distill_loss: not enough layers for the requested variant");
  }
  Var<T> total;
  for (std::size_t k = 0; k < pairs; ++k) {
    Var<T> student = s[bottom_end - 1 - k];
    Var<T> teacher = f[f.size() - 1 - k];
    if (student.shape() != teacher.shape()) {
      throw ContractError("distill_loss: student " + shape_to_string(student.shape()) + " vs teacher " +
                          shape_to_string(teacher.shape()));
    }
    Var<T> term = o::smooth_l1_sum(student, o::stop_gradient(teacher));
    total = total.valid() ? o::add(total, term) : term;
  }
  return o::scale(total, T(1) / static_cast<T>(enc.frames));
}

template <typename T>
Stage2LossTerms<T> stage2_loss(const Model<T>& model, BoundParameters<T>& p, const EncoderOutputs<T>& enc,
                               std::span<const int> labels, const LossWeights& w) {
  Stage2LossTerms<T> out;
  out.joint = joint_loss(model, p, enc, labels, w);
  out.total = out.joint.total;
  if (w.beta > 0.0) {
    out.distill = distill_loss(enc, w.distill_variant);
    out.total = o::add(out.total, o::scale(out.distill, static_cast<T>(w.beta)));
  }
  return out;
}

#define STREAMASR_INSTANTIATE_LOSSES(T)                                                                        \
  template double ctc_negative_log_likelihood<T>(const Tensor<T>&, std::span<const int>, int);                 \
  template Var<T> ctc_loss<T>(Var<T>, std::span<const int>, int);                                              \
  template Var<T> aed_loss<T>(Var<T>, std::span<const int>, double);                                           \
  template AsrLossTerms<T> asr_loss<T>(const Model<T>&, BoundParameters<T>&, Var<T>, CtcTap,                   \
                                       std::span<const int>, const LossWeights&);                              \
  template JointLossTerms<T> joint_loss<T>(const Model<T>&, BoundParameters<T>&, const EncoderOutputs<T>&,     \
                                           std::span<const int>, const LossWeights&);                          \
  template Var<T> distill_loss<T>(const EncoderOutputs<T>&, DistillVariant);                                   \
  template Stage2LossTerms<T> stage2_loss<T>(const Model<T>&, BoundParameters<T>&, const EncoderOutputs<T>&,   \
                                             std::span<const int>, const LossWeights&);

STREAMASR_INSTANTIATE_LOSSES(float)
STREAMASR_INSTANTIATE_LOSSES(double)

}  // namespace streamasr
