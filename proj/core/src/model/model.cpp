#include "streamasr/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "streamasr/errors.hpp"

namespace streamasr {

namespace o = ops;

std::size_t subsampled_length(std::size_t frames) {
  if (frames < kMinInputFrames) return 0;
  return ((frames - 1) / 2 - 1) / 2;
}

std::size_t required_input_frames(std::size_t encoder_frames) {
  return encoder_frames == 0 ? 0 : 4 * encoder_frames + 3;
}

std::string added_layer_prefix(int index) { return "enc.added" + std::to_string(index) + "."; }

std::vector<std::string> bottom_layer_prefixes(const ModelConfig& config) {
  std::vector<std::string> out;
  for (int i = 0; i < config.n2; ++i) out.push_back("enc.base" + std::to_string(i) + ".");
  if (config.with_added_layers) {
    for (int i = 0; i < config.n1; ++i) out.push_back(added_layer_prefix(i));
  }
  return out;
}

std::vector<std::string> top_layer_prefixes(const ModelConfig& config) {
  std::vector<std::string> out;
  for (int i = 0; i < config.m; ++i) out.push_back("enc.top" + std::to_string(i) + ".");
  return out;
}

std::string ctc_head_prefix(CtcTap tap) {
  switch (tap) {
    case CtcTap::bottom_streaming: return "ctc.bottom.";
    case CtcTap::top_streaming: return "ctc.top_stream.";
    case CtcTap::top_full: return "ctc.top_full.";
  }
  return "ctc.?.";
}

template <typename T>
Tensor<T> sinusoid_positions(std::size_t frames, std::size_t d) {
  Tensor<T> pe(Shape{frames, d});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.at(t, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe.at(t, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

namespace {

template <typename T>
class Initializer {
 public:
  Initializer(ParameterSet<T>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void weight(const std::string& path, std::size_t in, std::size_t out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    uniform(path, Shape{in, out}, bound);
  }
  void uniform(const std::string& path, Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng_));
    params_.add(path, std::move(t));
  }
  void zeros(const std::string& path, std::size_t n) { params_.add(path, Tensor<T>(Shape{n})); }
  void norm(const std::string& prefix, std::size_t d) {
    params_.add(prefix + "gamma", Tensor<T>(Shape{d}, T(1)));
    params_.add(prefix + "beta", Tensor<T>(Shape{d}));
  }
  void linear(const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + "w", in, out);
    zeros(prefix + "b", out);
  }
  void attention(const std::string& prefix, std::size_t d) {
    norm(prefix + "norm.", d);
    for (const char* name : {"q", "k", "v", "o"}) {
      weight(prefix + "w" + name, d, d);
      zeros(prefix + "b" + name, d);
    }
  }
  void feed_forward(const std::string& prefix, std::size_t d, std::size_t d_ff) {
    norm(prefix + "norm.", d);
    weight(prefix + "w1", d, d_ff);
    zeros(prefix + "b1", d_ff);
    weight(prefix + "w2", d_ff, d);
    zeros(prefix + "b2", d);
  }
  void conformer_layer(const std::string& prefix, const ModelConfig& c) {
    const auto d = static_cast<std::size_t>(c.d_model);
    feed_forward(prefix + "ff1.", d, static_cast<std::size_t>(c.d_ff));
    attention(prefix + "mha.", d);
    norm(prefix + "conv.norm.", d);
    linear(prefix + "conv.pw1.", d, 2 * d);
    uniform(prefix + "conv.causal.kernel", Shape{static_cast<std::size_t>(c.causal_kernel), d},
            1.0 / std::sqrt(static_cast<double>(c.causal_kernel)));
    uniform(prefix + "conv.centered.kernel", Shape{static_cast<std::size_t>(c.centered_kernel), d},
            1.0 / std::sqrt(static_cast<double>(c.centered_kernel)));
    zeros(prefix + "conv.dw_bias", d);
    norm(prefix + "conv.dw_norm.", d);
    linear(prefix + "conv.pw2.", d, d);
    feed_forward(prefix + "ff2.", d, static_cast<std::size_t>(c.d_ff));
    norm(prefix + "final_norm.", d);
  }
  void decoder(const std::string& prefix, const ModelConfig& c) {
    const auto d = static_cast<std::size_t>(c.d_model), v = static_cast<std::size_t>(c.vocab_size);
    uniform(prefix + "embed", Shape{v, d}, 1.0);
    for (int i = 0; i < c.decoder_layers; ++i) {
      const std::string lp = prefix + "layer" + std::to_string(i) + ".";
      attention(lp + "self_attn.", d);
      attention(lp + "src_attn.", d);
      feed_forward(lp + "ff.", d, static_cast<std::size_t>(c.d_ff));
    }
    norm(prefix + "final_norm.", d);
    linear(prefix + "out.", d, v);
  }

 private:
  ParameterSet<T>& params_;
  std::mt19937_64 rng_;
};

}  // namespace

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet<T> params;
  Initializer<T> init(params, seed);
  const auto d = static_cast<std::size_t>(config.d_model), f = static_cast<std::size_t>(config.feat_dim);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  init.linear("frontend.conv1.", 3 * f, d);
  init.linear("frontend.conv2.", 3 * d, d);
  init.linear("frontend.out.", d, d);
  for (int i = 0; i < config.n2; ++i) init.conformer_layer("enc.base" + std::to_string(i) + ".", config);
  for (const auto& prefix : top_layer_prefixes(config)) init.conformer_layer(prefix, config);

  auto head = [&](CtcTap tap) { init.linear(ctc_head_prefix(tap), d, v); };
  auto share = [&](CtcTap from, CtcTap to) {
    params.alias(ctc_head_prefix(from) + "w", ctc_head_prefix(to) + "w");
    params.alias(ctc_head_prefix(from) + "b", ctc_head_prefix(to) + "b");
  };
  head(CtcTap::top_full);
  switch (config.ctc_sharing) {
    case CtcSharing::c1:
      head(CtcTap::bottom_streaming);
      share(CtcTap::top_streaming, CtcTap::top_full);
      break;
    case CtcSharing::c2:
      head(CtcTap::top_streaming);
      share(CtcTap::bottom_streaming, CtcTap::top_full);
      break;
    case CtcSharing::c3:
      share(CtcTap::bottom_streaming, CtcTap::top_full);
      share(CtcTap::top_streaming, CtcTap::top_full);
      break;
  }
  init.decoder("dec.l2r.", config);
  init.decoder("dec.r2l.", config);
  if (config.with_added_layers) insert_added_layers(params, config, seed ^ 0x5eed5eedULL);
  return params;
}

template <typename T>
void insert_added_layers(ParameterSet<T>& params, const ModelConfig& config, std::uint64_t seed) {
  Initializer<T> init(params, seed);
  for (int i = 0; i < config.n1; ++i) init.conformer_layer(added_layer_prefix(i), config);
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
}

template <typename T>
Var<T> Model<T>::norm(BoundParameters<T>& p, const std::string& prefix, Var<T> x) const {
  return o::layer_norm(x, p[prefix + "gamma"], p[prefix + "beta"], T(1e-5));
}

template <typename T>
Var<T> Model<T>::maybe_dropout(Var<T> x, std::mt19937_64* rng) const {
  if (rng == nullptr || config_.dropout <= 0.0) return x;
  return o::dropout(x, config_.dropout, *rng);
}

template <typename T>
Var<T> Model<T>::subsample(BoundParameters<T>& p, const Tensor<T>& features, std::size_t position_offset) const {
  if (features.rank() != 2 || features.cols() != static_cast<std::size_t>(config_.feat_dim)) {
    throw DimensionError("subsample: expected features [T, " + std::to_string(config_.feat_dim) + "], got " +
                         shape_to_string(features.shape()));
  }
  if (features.rows() < kMinInputFrames) {
    throw DimensionError("subsample: " + std::to_string(features.rows()) + " frames is shorter than the minimum " +
                         std::to_string(kMinInputFrames));
  }
  Var<T> x = p.tape().constant(features);
  x = o::relu(o::linear(o::frame_stack(x, 3, 2), p["frontend.conv1.w"], p["frontend.conv1.b"]));
  x = o::relu(o::linear(o::frame_stack(x, 3, 2), p["frontend.conv2.w"], p["frontend.conv2.b"]));
  x = o::linear(x, p["frontend.out.w"], p["frontend.out.b"]);
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  Tensor<T> pe = sinusoid_positions<T>(position_offset + rows, d);
  if (position_offset > 0) {
    pe = Tensor<T>(Shape{rows, d}, std::vector<T>(pe.storage().begin() + static_cast<std::ptrdiff_t>(position_offset * d),
                                                  pe.storage().end()));
  }
  return o::add_constant(x, pe);
}

template <typename T>
Var<T> Model<T>::attend(BoundParameters<T>& p, const std::string& prefix, Var<T> q, Var<T> k, Var<T> v,
                        std::span<const std::uint8_t> flags) const {
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dk = static_cast<std::size_t>(config_.d_model) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  std::vector<Var<T>> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = o::slice_cols(q, h * dk, (h + 1) * dk);
    Var<T> kh = o::slice_cols(k, h * dk, (h + 1) * dk);
    Var<T> vh = o::slice_cols(v, h * dk, (h + 1) * dk);
    Var<T> probs = o::masked_softmax(o::scale(o::matmul_bt(qh, kh), scale), flags);
    contexts.push_back(o::matmul(probs, vh));
  }
  Var<T> ctx = heads == 1 ? contexts[0] : o::concat_cols(std::span<const Var<T>>(contexts));
  return o::linear(ctx, p[prefix + "wo"], p[prefix + "bo"]);
}

template <typename T>
Var<T> Model<T>::attention(BoundParameters<T>& p, const std::string& prefix, Var<T> query, Var<T> memory,
                           const AttentionMask* mask) const {
  Var<T> q = o::linear(query, p[prefix + "wq"], p[prefix + "bq"]);
  Var<T> k = o::linear(memory, p[prefix + "wk"], p[prefix + "bk"]);
  Var<T> v = o::linear(memory, p[prefix + "wv"], p[prefix + "bv"]);
  std::span<const std::uint8_t> flags;
  if (mask != nullptr) {
    if (mask->rows() != query.value().rows() || mask->cols() != memory.value().rows()) {
      throw DimensionError("attention: mask shape does not match query/key lengths");
    }
    flags = mask->flags();
  }
  return attend(p, prefix, q, k, v, flags);
}

template <typename T>
Var<T> Model<T>::feed_forward(BoundParameters<T>& p, const std::string& prefix, Var<T> x, bool swish_act) const {
  Var<T> h = o::linear(norm(p, prefix + "norm.", x), p[prefix + "w1"], p[prefix + "b1"]);
  h = swish_act ? o::swish(h) : o::relu(h);
  return o::linear(h, p[prefix + "w2"], p[prefix + "b2"]);
}

template <typename T>
Var<T> Model<T>::conv_module(BoundParameters<T>& p, const std::string& prefix, Var<T> x, ConvMode conv) const {
  Var<T> h = norm(p, prefix + "norm.", x);
  h = o::glu(o::linear(h, p[prefix + "pw1.w"], p[prefix + "pw1.b"]));
  const std::string kernel = prefix + (conv == ConvMode::causal ? "causal.kernel" : "centered.kernel");
  h = o::add_row(o::depthwise_conv1d(h, p[kernel], conv), p[prefix + "dw_bias"]);
  h = o::swish(norm(p, prefix + "dw_norm.", h));
  return o::linear(h, p[prefix + "pw2.w"], p[prefix + "pw2.b"]);
}

template <typename T>
Var<T> Model<T>::conformer_layer(BoundParameters<T>& p, const std::string& prefix, Var<T> x, ConvMode conv,
                                 const AttentionMask& mask, std::mt19937_64* rng) const {
  if (mask.rows() != x.value().rows() || mask.cols() != x.value().rows()) {
    throw DimensionError("conformer layer: mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                         " does not match " + std::to_string(x.value().rows()) + " frames");
  }
  x = o::add(x, o::scale(maybe_dropout(feed_forward(p, prefix + "ff1.", x, true), rng), T(0.5)));
  Var<T> h = norm(p, prefix + "mha.norm.", x);
  x = o::add(x, maybe_dropout(attention(p, prefix + "mha.", h, h, &mask), rng));
  x = o::add(x, maybe_dropout(conv_module(p, prefix + "conv.", x, conv), rng));
  x = o::add(x, o::scale(maybe_dropout(feed_forward(p, prefix + "ff2.", x, true), rng), T(0.5)));
  return norm(p, prefix + "final_norm.", x);
}

namespace {

template <typename T>
Tensor<T> stack_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty()) return b;
  Tensor<T> out(Shape{a.rows() + b.rows(), b.cols()});
  std::copy(a.storage().begin(), a.storage().end(), out.storage().begin());
  std::copy(b.storage().begin(), b.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
Tensor<T> last_rows(const Tensor<T>& a, std::size_t n) {
  const std::size_t keep = std::min(n, a.rows());
  const auto first = a.storage().begin() + static_cast<std::ptrdiff_t>((a.rows() - keep) * a.cols());
  return Tensor<T>(Shape{keep, a.cols()}, std::vector<T>(first, a.storage().end()));
}

}  // namespace

template <typename T>
Var<T> Model<T>::conformer_layer_step(BoundParameters<T>& p, const std::string& prefix, Var<T> x,
                                      LayerCache<T>& cache) const {
  Tape<T>& tape = p.tape();
  const std::size_t rows = x.value().rows();
  x = o::add(x, o::scale(feed_forward(p, prefix + "ff1.", x, true), T(0.5)));

  const std::string mha = prefix + "mha.";
  Var<T> h = norm(p, mha + "norm.", x);
  Var<T> q = o::linear(h, p[mha + "wq"], p[mha + "bq"]);
  cache.keys = stack_rows(cache.keys, o::linear(h, p[mha + "wk"], p[mha + "bk"]).value());
  cache.values = stack_rows(cache.values, o::linear(h, p[mha + "wv"], p[mha + "bv"]).value());
  x = o::add(x, attend(p, mha, q, tape.constant(cache.keys), tape.constant(cache.values), {}));

  const std::string conv = prefix + "conv.";
  Var<T> g = o::glu(o::linear(norm(p, conv + "norm.", x), p[conv + "pw1.w"], p[conv + "pw1.b"]));
  const Tensor<T> window = stack_rows(cache.conv_context, g.value());
  Var<T> dw = o::depthwise_conv1d(tape.constant(window), p[conv + "causal.kernel"], ConvMode::causal);
  dw = o::add_row(o::slice_rows(dw, window.rows() - rows, window.rows()), p[conv + "dw_bias"]);
  cache.conv_context = last_rows(window, static_cast<std::size_t>(config_.causal_kernel - 1));
  Var<T> c = o::linear(o::swish(norm(p, conv + "dw_norm.", dw)), p[conv + "pw2.w"], p[conv + "pw2.b"]);
  x = o::add(x, c);

  x = o::add(x, o::scale(feed_forward(p, prefix + "ff2.", x, true), T(0.5)));
  return norm(p, prefix + "final_norm.", x);
}

template <typename T>
void Model<T>::run_stack(BoundParameters<T>& p, Var<T> frontend, EncoderMode mode, const ChunkSpec& chunk,
                         const EncoderOptions& options, EncoderOutputs<T>& out) const {
  const std::size_t frames = frontend.value().rows();
  const bool streaming = mode == EncoderMode::streaming;
  if (streaming) chunk.validate();
  const ConvMode conv = options.force_conv.value_or(streaming ? ConvMode::causal : ConvMode::centered);
  const bool full = !streaming || chunk.full_context;
  const AttentionMask bottom_mask =
      full ? make_full_mask(frames, frames) : make_chunk_mask(frames, static_cast<std::size_t>(chunk.bottom_chunk));
  const AttentionMask top_mask =
      full ? make_full_mask(frames, frames) : make_chunk_mask(frames, static_cast<std::size_t>(chunk.top_chunk));

  auto& layers = streaming ? out.streaming_layers : out.full_layers;
  layers.clear();
  Var<T> x = frontend;
  for (const auto& prefix : bottom_layer_prefixes(config_)) {
    x = conformer_layer(p, prefix, x, conv, bottom_mask, options.dropout_rng);
    layers.push_back(x);
  }
  if (streaming) out.x_s_l = x;
  out.bottom_layers = layers.size();
  for (const auto& prefix : top_layer_prefixes(config_)) {
    x = conformer_layer(p, prefix, x, conv, top_mask, options.dropout_rng);
    layers.push_back(x);
  }
  (streaming ? out.x_s_h : out.x_ns_h) = x;
  out.frames = frames;
}

template <typename T>
EncoderOutputs<T> Model<T>::encode(BoundParameters<T>& p, const Tensor<T>& features, EncoderMode mode,
                                   const ChunkSpec& chunk, const EncoderOptions& options) const {
  EncoderOutputs<T> out;
  run_stack(p, subsample(p, features), mode, chunk, options, out);
  return out;
}

template <typename T>
EncoderOutputs<T> Model<T>::encode_joint(BoundParameters<T>& p, const Tensor<T>& features,
                                         const ChunkSpec& chunk, const EncoderOptions& options) const {
  EncoderOutputs<T> out;
  Var<T> front = subsample(p, features);
  run_stack(p, front, EncoderMode::streaming, chunk, options, out);
  run_stack(p, front, EncoderMode::non_streaming, chunk, options, out);
  return out;
}

template <typename T>
Var<T> Model<T>::ctc_logprobs(BoundParameters<T>& p, Var<T> tap, CtcTap head) const {
  const std::string prefix = ctc_head_prefix(head);
  return o::log_softmax(o::linear(tap, p[prefix + "w"], p[prefix + "b"]), -1);
}

template <typename T>
std::vector<int> Model<T>::decoder_targets(std::span<const int> tokens, Direction dir) const {
  std::vector<int> out(tokens.begin(), tokens.end());
  if (dir == Direction::r2l) std::reverse(out.begin(), out.end());
  out.push_back(config_.eos());
  return out;
}

template <typename T>
std::vector<int> Model<T>::decoder_inputs(std::span<const int> tokens, Direction dir) const {
  std::vector<int> inputs;
  inputs.reserve(tokens.size() + 1);
  inputs.push_back(config_.sos());
  if (dir == Direction::l2r) {
    inputs.insert(inputs.end(), tokens.begin(), tokens.end());
  } else {
    inputs.insert(inputs.end(), tokens.rbegin(), tokens.rend());
  }
  return inputs;
}

template <typename T>
Var<T> Model<T>::decoder_forward(BoundParameters<T>& p, Var<T> memory, std::span<const int> inputs,
                                 Direction dir) const {
  const std::string prefix = dir == Direction::l2r ? "dec.l2r." : "dec.r2l.";
  Var<T> x = o::embedding(p[prefix + "embed"], inputs);
  x = o::add_constant(x, sinusoid_positions<T>(inputs.size(), static_cast<std::size_t>(config_.d_model)));
  const AttentionMask causal = make_causal_mask(inputs.size());
  for (int i = 0; i < config_.decoder_layers; ++i) {
    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
    Var<T> h = norm(p, lp + "self_attn.norm.", x);
    x = o::add(x, attention(p, lp + "self_attn.", h, h, &causal));
    h = norm(p, lp + "src_attn.norm.", x);
    x = o::add(x, attention(p, lp + "src_attn.", h, memory, nullptr));
    x = o::add(x, feed_forward(p, lp + "ff.", x, false));
  }
  x = norm(p, prefix + "final_norm.", x);
  return o::linear(x, p[prefix + "out.w"], p[prefix + "out.b"]);
}

template <typename T>
Var<T> Model<T>::decoder_logits(BoundParameters<T>& p, Var<T> memory, std::span<const int> tokens,
                                Direction dir) const {
  if (tokens.empty()) throw ContractError("attention decoder: empty token sequence");
  const std::vector<int> inputs = decoder_inputs(tokens, dir);
  return decoder_forward(p, memory, inputs, dir);
}

template <typename T>
T Model<T>::decoder_score(BoundParameters<T>& p, Var<T> memory, std::span<const int> tokens, Direction dir) const {
  // An empty hypothesis still scores eos after sos.
  const std::vector<int> inputs = decoder_inputs(tokens, dir);
  const std::vector<int> targets = decoder_targets(tokens, dir);
  Var<T> logp = o::log_softmax(decoder_forward(p, memory, inputs, dir), -1);
  T total{0};
  for (std::size_t t = 0; t < targets.size(); ++t) total += logp.value().at(t, static_cast<std::size_t>(targets[t]));
  return total;
}

template Tensor<float> sinusoid_positions<float>(std::size_t, std::size_t);
template Tensor<double> sinusoid_positions<double>(std::size_t, std::size_t);
template ParameterSet<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, std::uint64_t);
template void insert_added_layers<float>(ParameterSet<float>&, const ModelConfig&, std::uint64_t);
template void insert_added_layers<double>(ParameterSet<double>&, const ModelConfig&, std::uint64_t);
template class Model<float>;
template class Model<double>;

}  // namespace streamasr
