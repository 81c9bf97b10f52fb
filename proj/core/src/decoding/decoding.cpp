#include "streamasr/decoding/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "streamasr/errors.hpp"
#include "streamasr/model/streaming.hpp"

namespace streamasr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

template <typename T>
GreedyResult greedy_search(const Tensor<T>& logprobs, int blank) {
  GreedyResult out;
  if (logprobs.empty()) return out;
  const std::size_t frames = logprobs.rows(), vocab = logprobs.cols();
  int prev = blank;
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < vocab; ++v)
      if (logprobs.at(t, v) > logprobs.at(t, best)) best = v;
    const int token = static_cast<int>(best);
    if (token != blank && token != prev) {
      out.tokens.push_back(token);
      out.spike_frames.push_back(t);
      out.spike_logprobs.push_back(static_cast<double>(logprobs.at(t, best)));
    }
    prev = token;
  }
  return out;
}

CtcPrefixBeam::CtcPrefixBeam(int beam, int blank) : beam_(beam), blank_(blank) {
  if (beam < 1) throw ConfigError("beam must be at least 1");
  hyps_.emplace(std::vector<int>{}, Score{0.0, kNegInf});
}

template <typename T>
void CtcPrefixBeam::advance(const Tensor<T>& logprobs) {
  if (logprobs.empty()) return;
  const std::size_t vocab = logprobs.cols();
  for (std::size_t t = 0; t < logprobs.rows(); ++t) {
    std::map<std::vector<int>, Score> next;
    auto slot = [&next](const std::vector<int>& prefix) -> Score& {
      return next.try_emplace(prefix, Score{kNegInf, kNegInf}).first->second;
    };
    for (const auto& [prefix, s] : hyps_) {
      const double total = log_add(s.blank, s.nonblank);
      for (std::size_t v = 0; v < vocab; ++v) {
        const int c = static_cast<int>(v);
        const double lp = static_cast<double>(logprobs.at(t, v));
        if (c == blank_) {
          Score& same = slot(prefix);
          same.blank = log_add(same.blank, total + lp);
          continue;
        }
        std::vector<int> extended = prefix;
        extended.push_back(c);
        Score& ext = slot(extended);
        if (!prefix.empty() && prefix.back() == c) {
          ext.nonblank = log_add(ext.nonblank, s.blank + lp);
          Score& same = slot(prefix);
          same.nonblank = log_add(same.nonblank, s.nonblank + lp);
        } else {
          ext.nonblank = log_add(ext.nonblank, total + lp);
        }
      }
    }
    std::erase_if(next, [](const auto& kv) { return kv.second.blank == kNegInf && kv.second.nonblank == kNegInf; });
    if (next.size() > static_cast<std::size_t>(beam_)) {
      std::vector<std::pair<double, const std::vector<int>*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, s] : next) ranked.emplace_back(log_add(s.blank, s.nonblank), &prefix);
      std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::map<std::vector<int>, Score> kept;
      for (std::size_t i = 0; i < static_cast<std::size_t>(beam_); ++i) kept.emplace(*ranked[i].second, next.at(*ranked[i].second));
      next = std::move(kept);
    }
    hyps_ = std::move(next);
    ++frames_;
  }
}

std::vector<Hypothesis> CtcPrefixBeam::nbest(std::size_t n) const {
  std::vector<Hypothesis> out;
  for (const auto& [prefix, s] : hyps_) {
    Hypothesis h;
    h.prefix = prefix;
    h.logp_blank = s.blank;
    h.logp_nonblank = s.nonblank;
    h.s_ctc = log_add(s.blank, s.nonblank);
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.s_ctc > b.s_ctc; });
  if (out.size() > n) out.resize(n);
  return out;
}

template <typename T>
std::vector<Hypothesis> prefix_beam_search(const Tensor<T>& logprobs, int beam, std::size_t nbest, int blank) {
  CtcPrefixBeam search(beam, blank);
  search.advance(logprobs);
  return search.nbest(nbest);
}

double fused_score(double s_ctc, double s_l2r, double s_r2l, const RescoreWeights& w) {
  return w.lambda * s_ctc + (1.0 - w.alpha) * s_l2r + w.alpha * s_r2l;
}

std::size_t select_best(std::span<const Hypothesis> nbest) {
  if (nbest.empty()) throw ContractError("rescoring: empty n-best list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < nbest.size(); ++i)
    if (nbest[i].s_final > nbest[best].s_final) best = i;
  return best;
}

template <typename T>
std::size_t attention_rescore(const Model<T>& model, const ParameterSet<T>& params, std::span<Hypothesis> nbest,
                              const Tensor<T>& memory, const RescoreWeights& w) {
  if (nbest.empty()) throw ContractError("rescoring: empty n-best list");
  Tape<T> tape;
  BoundParameters<T> p(params, tape);
  Var<T> mem = tape.constant(memory);
  for (auto& h : nbest) {
    h.s_l2r = static_cast<double>(model.decoder_score(p, mem, h.prefix, Direction::l2r));
    h.s_r2l = w.alpha == 0.0 ? 0.0 : static_cast<double>(model.decoder_score(p, mem, h.prefix, Direction::r2l));
    h.s_final = fused_score(h.s_ctc, h.s_l2r, h.s_r2l, w);
  }
  return select_best(nbest);
}

namespace {

template <typename T>
Tensor<float> ctc_rows(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& tap, CtcTap head) {
  Tape<T> tape;
  BoundParameters<T> p(params, tape);
  return model.ctc_logprobs(p, tape.constant(tap), head).value().template cast<float>();
}

void append_rows(Tensor<float>& dst, const Tensor<float>& rows) {
  if (rows.empty()) return;
  if (dst.empty()) {
    dst = rows;
    return;
  }
  std::vector<float> data = std::move(dst.storage());
  data.insert(data.end(), rows.storage().begin(), rows.storage().end());
  const std::size_t n = data.size() / rows.cols();
  dst = Tensor<float>(Shape{n, rows.cols()}, std::move(data));
}

template <typename T>
Tensor<T> tail_rows(const Tensor<T>& a, std::size_t from) {
  const auto first = a.storage().begin() + static_cast<std::ptrdiff_t>(from * a.cols());
  return Tensor<T>(Shape{a.rows() - from, a.cols()}, std::vector<T>(first, a.storage().end()));
}

PartialResult next_partial(const PartialResult* prev, std::vector<int> tokens, double ms) {
  PartialResult out;
  out.audio_ms = ms;
  out.tokens = std::move(tokens);
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    const bool seen = prev != nullptr && i < prev->tokens.size() && prev->tokens[i] == out.tokens[i];
    out.first_seen_ms.push_back(seen ? prev->first_seen_ms[i] : ms);
  }
  return out;
}

template <typename T>
void finish_decode(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& features,
                   const Tensor<T>& top_tap, const Tensor<float>& top_logprobs, CtcPrefixBeam& beam,
                   const DecodeOptions& options, DecodeResult& out) {
  out.top_greedy = greedy_search(top_logprobs, model.config().blank());
  out.bottom_greedy = greedy_search(out.bottom_logprobs, model.config().blank());
  out.nbest = beam.nbest(static_cast<std::size_t>(options.nbest));
  if (options.rescore_on_full) {
    Tape<T> tape;
    BoundParameters<T> p(params, tape);
    const EncoderOutputs<T> enc = model.encode(p, features, EncoderMode::non_streaming, ChunkSpec::full());
    out.best = attention_rescore(model, params, std::span<Hypothesis>(out.nbest), enc.x_ns_h.value(), options.weights);
  } else {
    out.best = attention_rescore(model, params, std::span<Hypothesis>(out.nbest), top_tap, options.weights);
  }
}

}  // namespace

template <typename T>
DecodeResult offline_decode(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& features,
                            const DecodeOptions& options) {
  Tape<T> tape;
  BoundParameters<T> p(params, tape);
  const EncoderOutputs<T> enc = model.encode(p, features, EncoderMode::streaming, options.chunk);
  DecodeResult out;
  out.encoder_frames = enc.frames;
  out.bottom_logprobs = ctc_rows(model, params, enc.x_s_l.value(), CtcTap::bottom_streaming);
  const Tensor<float> top = ctc_rows(model, params, enc.x_s_h.value(), CtcTap::top_streaming);
  CtcPrefixBeam beam(options.beam, model.config().blank());
  beam.advance(top);
  out.top_updates = 1;
  const double ms = static_cast<double>(enc.frames) * model.config().encoder_frame_ms();
  out.partials.push_back(next_partial(nullptr, greedy_search(out.bottom_logprobs).tokens, ms));
  finish_decode(model, params, features, enc.x_s_h.value(), top, beam, options, out);
  return out;
}

template <typename T>
DecodeResult streaming_decode(const Model<T>& model, const ParameterSet<T>& params, const Tensor<T>& features,
                              const DecodeOptions& options) {
  if (options.chunk.full_context) return offline_decode(model, params, features, options);
  const ModelConfig& cfg = model.config();
  if (features.rank() != 2 || features.cols() != static_cast<std::size_t>(cfg.feat_dim)) {
    throw DimensionError("decode: expected features [T, " + std::to_string(cfg.feat_dim) + "]");
  }
  const std::size_t total = features.rows();
  if (total < kMinInputFrames) throw DimensionError("decode: utterance shorter than the minimum input length");

  StreamingEncoder<T> encoder(model, params, options.chunk);
  CtcPrefixBeam beam(options.beam, cfg.blank());
  DecodeResult out;
  Tensor<float> top_logprobs;
  const auto bc = static_cast<std::size_t>(options.chunk.bottom_chunk);
  const double chunk_ms = static_cast<double>(bc) * cfg.encoder_frame_ms();
  std::size_t fed = 0;
  for (std::size_t k = 1; !encoder.finished(); ++k) {
    const std::size_t target = std::min(total, required_input_frames(bc * k));
    if (target > fed) {
      const auto first = features.storage().begin() + static_cast<std::ptrdiff_t>(fed * features.cols());
      const auto last = features.storage().begin() + static_cast<std::ptrdiff_t>(target * features.cols());
      encoder.accept(Tensor<T>(Shape{target - fed, features.cols()}, std::vector<T>(first, last)));
      fed = target;
    }
    if (fed == total) encoder.finish();

    const std::size_t have = out.bottom_logprobs.empty() ? 0 : out.bottom_logprobs.rows();
    if (encoder.bottom_frames() > have) {
      append_rows(out.bottom_logprobs,
                  ctc_rows(model, params, tail_rows(encoder.bottom(), have), CtcTap::bottom_streaming));
      const PartialResult* prev = out.partials.empty() ? nullptr : &out.partials.back();
      out.partials.push_back(
          next_partial(prev, greedy_search(out.bottom_logprobs, cfg.blank()).tokens, static_cast<double>(k) * chunk_ms));
    }
    const std::size_t have_top = top_logprobs.empty() ? 0 : top_logprobs.rows();
    if (encoder.top_frames() > have_top) {
      const Tensor<float> fresh = ctc_rows(model, params, tail_rows(encoder.top(), have_top), CtcTap::top_streaming);
      beam.advance(fresh);
      append_rows(top_logprobs, fresh);
      ++out.top_updates;
    }
  }
  out.encoder_frames = encoder.bottom_frames();
  finish_decode(model, params, features, encoder.top(), top_logprobs, beam, options, out);
  return out;
}

#define STREAMASR_INSTANTIATE_DECODING(T)                                                                          \
  template GreedyResult greedy_search<T>(const Tensor<T>&, int);                                                   \
  template void CtcPrefixBeam::advance<T>(const Tensor<T>&);                                                       \
  template std::vector<Hypothesis> prefix_beam_search<T>(const Tensor<T>&, int, std::size_t, int);                 \
  template std::size_t attention_rescore<T>(const Model<T>&, const ParameterSet<T>&, std::span<Hypothesis>,        \
                                            const Tensor<T>&, const RescoreWeights&);                              \
  template DecodeResult streaming_decode<T>(const Model<T>&, const ParameterSet<T>&, const Tensor<T>&,             \
                                            const DecodeOptions&);                                                 \
  template DecodeResult offline_decode<T>(const Model<T>&, const ParameterSet<T>&, const Tensor<T>&,               \
                                          const DecodeOptions&);

STREAMASR_INSTANTIATE_DECODING(float)
STREAMASR_INSTANTIATE_DECODING(double)

}  // namespace streamasr
