#include "streamasr/model/config.hpp"

#include <charconv>
#include <string>

#include "streamasr/errors.hpp"

namespace streamasr {

CtcSharing parse_ctc_sharing(std::string_view text) {
  if (text == "C1" || text == "c1") return CtcSharing::c1;
  if (text == "C2" || text == "c2") return CtcSharing::c2;
  if (text == "C3" || text == "c3") return CtcSharing::c3;
  throw ConfigError("unknown CTC sharing variant '" + std::string(text) + "' (expected C1, C2 or C3)");
}

std::string_view to_string(CtcSharing sharing) {
  switch (sharing) {
    case CtcSharing::c1: return "C1";
    case CtcSharing::c2: return "C2";
    case CtcSharing::c3: return "C3";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (n1 < 1 || n2 < 1 || m < 1) fail("n1, n2 and m must all be >= 1");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (d_ff < 1) fail("d_ff must be positive");
  if (causal_kernel < 1) fail("causal_kernel must be positive");
  if (centered_kernel < 1 || centered_kernel % 2 == 0) fail("centered_kernel must be odd");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (feat_dim < 1) fail("feat_dim must be positive");
  if (subsample_factor != 4) fail("only subsample_factor 4 is supported");
  if (frame_shift_ms < 1) fail("frame_shift_ms must be positive");
  if (decoder_layers < 1) fail("decoder_layers must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.n1 = 2;
  c.n2 = 5;
  c.m = 5;
  c.d_model = 256;
  c.n_heads = 4;
  c.d_ff = 2048;
  c.causal_kernel = 15;
  c.centered_kernel = 15;
  c.vocab_size = 4233;
  c.feat_dim = 80;
  c.decoder_layers = 3;
  return c;
}

void ChunkSpec::validate() const {
  if (full_context) return;
  if (bottom_chunk < 1) throw ConfigError("chunk spec: bottom chunk must be >= 1");
  if (top_chunk < bottom_chunk) throw ConfigError("chunk spec: top chunk must be >= bottom chunk");
}

namespace {

int parse_positive(std::string_view text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || v < 1) {
    throw ConfigError("chunk spec: '" + std::string(text) + "' is not a positive integer");
  }
  return v;
}

}  // namespace

ChunkSpec ChunkSpec::parse(std::string_view text) {
  if (text == "full" || text == "-1") return full();
  const auto slash = text.find('/');
  ChunkSpec spec;
  if (slash == std::string_view::npos) {
    spec = uniform(parse_positive(text));
  } else {
    spec = ChunkSpec{parse_positive(text.substr(0, slash)), parse_positive(text.substr(slash + 1)), false};
  }
  spec.validate();
  return spec;
}

std::string ChunkSpec::to_string() const {
  if (full_context) return "full";
  return std::to_string(bottom_chunk) + "/" + std::to_string(top_chunk);
}

}  // namespace streamasr
