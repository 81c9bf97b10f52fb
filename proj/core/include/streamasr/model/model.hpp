#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "streamasr/model/config.hpp"
#include "streamasr/model/mask.hpp"
#include "streamasr/model/parameters.hpp"
#include "streamasr/numerics/ops.hpp"

namespace streamasr {

enum class EncoderMode { streaming, non_streaming };

/// Encoder tap feeding a CTC head. Each tap has its own logical head path;
/// the sharing variant decides which of them alias one tensor.
enum class CtcTap { bottom_streaming, top_streaming, top_full };

enum class Direction { l2r, r2l };

/// Test hooks for encoder passes.
struct EncoderOptions {
  /// Overrides the conv branch the mode would pick.
  std::optional<ConvMode> force_conv;
  /// Drives dropout when config().dropout > 0; null disables dropout.
  std::mt19937_64* dropout_rng = nullptr;
};

template <typename T>
struct EncoderOutputs {
  std::size_t frames = 0;
  std::size_t bottom_layers = 0;  ///< layers in the bottom block; the rest are top layers
  Var<T> x_s_l;   ///< streaming bottom tap
  Var<T> x_s_h;   ///< streaming top tap
  Var<T> x_ns_h;  ///< non-streaming top tap (valid only when the full-context pass ran)
  /// Outputs of each layer, bottom block then top block, per pass.
  std::vector<Var<T>> streaming_layers;
  std::vector<Var<T>> full_layers;

  bool has_streaming() const noexcept { return x_s_h.valid(); }
  bool has_full() const noexcept { return x_ns_h.valid(); }
};

/// Encoder frames produced from `frames` input frames by the two stride-2 stages:
/// ((frames - 1) / 2 - 1) / 2. Output frame t depends on input frames 4t .. 4t + 6.
std::size_t subsampled_length(std::size_t frames);
/// Smallest input length whose subsampled output has `encoder_frames` frames.
std::size_t required_input_frames(std::size_t encoder_frames);
inline constexpr std::size_t kMinInputFrames = 7;

/// Parameter path prefixes of the encoder layers, bottom block first.
std::vector<std::string> bottom_layer_prefixes(const ModelConfig& config);
std::vector<std::string> top_layer_prefixes(const ModelConfig& config);
std::string added_layer_prefix(int index);
std::string ctc_head_prefix(CtcTap tap);

/// Sinusoidal absolute position table [frames, d].
template <typename T>
Tensor<T> sinusoid_positions(std::size_t frames, std::size_t d);

/// Random parameters for `config` (Xavier-uniform weights, zero biases, unit norms).
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Adds randomly initialized n1 layers to a stage-1 parameter set.
template <typename T>
void insert_added_layers(ParameterSet<T>& params, const ModelConfig& config, std::uint64_t seed);

/// Dual-mode chunked Conformer encoder with CTC heads and L2R/R2L attention decoders.
/// Stateless apart from its config: parameters arrive through BoundParameters.
/// Per-layer state carried between chunks by incremental streaming inference.
template <typename T>
struct LayerCache {
  Tensor<T> keys;          ///< [frames so far, d_model] projected attention keys
  Tensor<T> values;        ///< [frames so far, d_model]
  Tensor<T> conv_context;  ///< last causal_kernel - 1 depthwise inputs
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }

  /// Frontend output for `features`; positions start at `position_offset`.
  Var<T> subsample(BoundParameters<T>& p, const Tensor<T>& features, std::size_t position_offset = 0) const;

  Var<T> conformer_layer(BoundParameters<T>& p, const std::string& prefix, Var<T> x, ConvMode conv,
                         const AttentionMask& mask, std::mt19937_64* dropout_rng = nullptr) const;

  /// Streaming layer over one new chunk `x` that may attend to every cached
  /// frame and to all of itself; causal conv only. Appends to `cache`.
  Var<T> conformer_layer_step(BoundParameters<T>& p, const std::string& prefix, Var<T> x, LayerCache<T>& cache) const;

  /// One encoder pass. Streaming: bottom block under the bottom-chunk mask,
  /// top block under the top-chunk mask, causal conv. Non-streaming: full
  /// context and centered conv everywhere.
  EncoderOutputs<T> encode(BoundParameters<T>& p, const Tensor<T>& features, EncoderMode mode,
                           const ChunkSpec& chunk, const EncoderOptions& options = {}) const;
  /// Both passes over a shared frontend, as joint training needs.
  EncoderOutputs<T> encode_joint(BoundParameters<T>& p, const Tensor<T>& features, const ChunkSpec& chunk,
                                 const EncoderOptions& options = {}) const;

  /// Runs the layer stack on precomputed frontend output.
  void run_stack(BoundParameters<T>& p, Var<T> frontend, EncoderMode mode, const ChunkSpec& chunk,
                 const EncoderOptions& options, EncoderOutputs<T>& out) const;

  /// Frame log-posteriors [frames, vocab].
  Var<T> ctc_logprobs(BoundParameters<T>& p, Var<T> tap, CtcTap head) const;

  /// Teacher-forced decoder logits [tokens + 1, vocab] for inputs sos + tokens
  /// (reversed for R2L); targets are tokens (reversed for R2L) + eos.
  Var<T> decoder_logits(BoundParameters<T>& p, Var<T> memory, std::span<const int> tokens, Direction dir) const;

  /// Σ log p(target) over the decoder steps including eos.
  T decoder_score(BoundParameters<T>& p, Var<T> memory, std::span<const int> tokens, Direction dir) const;

  /// Decoder targets for `tokens`: reversed for R2L, then eos.
  std::vector<int> decoder_targets(std::span<const int> tokens, Direction dir) const;

 private:
  Var<T> attention(BoundParameters<T>& p, const std::string& prefix, Var<T> query, Var<T> memory,
                   const AttentionMask* mask) const;
  Var<T> attend(BoundParameters<T>& p, const std::string& prefix, Var<T> q, Var<T> k, Var<T> v,
                std::span<const std::uint8_t> flags) const;
  Var<T> feed_forward(BoundParameters<T>& p, const std::string& prefix, Var<T> x, bool swish_act) const;
  Var<T> maybe_dropout(Var<T> x, std::mt19937_64* rng) const;
  Var<T> conv_module(BoundParameters<T>& p, const std::string& prefix, Var<T> x, ConvMode conv) const;
  Var<T> norm(BoundParameters<T>& p, const std::string& prefix, Var<T> x) const;
  std::vector<int> decoder_inputs(std::span<const int> tokens, Direction dir) const;
  Var<T> decoder_forward(BoundParameters<T>& p, Var<T> memory, std::span<const int> inputs, Direction dir) const;

  ModelConfig config_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace streamasr
