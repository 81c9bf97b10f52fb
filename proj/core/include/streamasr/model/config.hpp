#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace streamasr {

/// Which encoder taps share a CTC head.
enum class CtcSharing {
  c1,  ///< top streaming + top non-streaming share; bottom head separate
  c2,  ///< top non-streaming + bottom streaming share; top streaming head separate
  c3,  ///< one head for all taps
};

CtcSharing parse_ctc_sharing(std::string_view text);
std::string_view to_string(CtcSharing sharing);

struct ModelConfig {
  int n1 = 2;  ///< layers added in stage 2 at the top of the bottom block
  int n2 = 5;  ///< bottom layers trained in stage 1
  int m = 5;   ///< top layers
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int causal_kernel = 15;
  int centered_kernel = 15;
  int vocab_size = 16;  ///< includes blank (0) and sos/eos (vocab_size - 1)
  int feat_dim = 16;
  int subsample_factor = 4;
  int frame_shift_ms = 10;
  int decoder_layers = 1;
  CtcSharing ctc_sharing = CtcSharing::c1;
  /// False for the stage-1 network, which has no n1 block.
  bool with_added_layers = true;
  double dropout = 0.0;

  void validate() const;

  int blank() const noexcept { return 0; }
  int sos() const noexcept { return vocab_size - 1; }
  int eos() const noexcept { return vocab_size - 1; }
  /// Duration of one encoder frame after subsampling.
  int encoder_frame_ms() const noexcept { return subsample_factor * frame_shift_ms; }
  int bottom_depth() const noexcept { return n2 + (with_added_layers ? n1 : 0); }
  int total_depth() const noexcept { return bottom_depth() + m; }

  /// Full-scale shape: 2/5/5 layers, d_model 256, 4 heads, d_ff 2048, kernel 15.
  static ModelConfig full_scale();
};

/// Streaming visibility policy for one encoder pass.
struct ChunkSpec {
  int bottom_chunk = 4;
  int top_chunk = 24;
  bool full_context = false;

  void validate() const;

  /// Parses "B/T", a single "C" (both blocks), or "full".
  static ChunkSpec parse(std::string_view text);
  static ChunkSpec full() { return ChunkSpec{1, 1, true}; }
  static ChunkSpec uniform(int chunk) { return ChunkSpec{chunk, chunk, false}; }
  std::string to_string() const;

  bool operator==(const ChunkSpec&) const = default;
};

}  // namespace streamasr
