#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "streamasr/errors.hpp"
#include "streamasr/model/streaming.hpp"

namespace streamasr {

void PrintTo(const ChunkSpec& c, std::ostream* os) { *os << c.to_string(); }

namespace {

using testing::random_features;
using testing::tiny_config;

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

struct Reference {
  Tensor<float> bottom, top;
};

Reference masked_pass(const Model<float>& model, const ParameterSet<float>& params, const Tensor<float>& x,
                      const ChunkSpec& chunk) {
  Tape<float> tape;
  BoundParameters<float> p(params, tape);
  const auto enc = model.encode(p, x, EncoderMode::streaming, chunk);
  return {enc.x_s_l.value(), enc.x_s_h.value()};
}

class StreamingEquivalence : public ::testing::TestWithParam<ChunkSpec> {};

TEST_P(StreamingEquivalence, IncrementalMatchesMaskedPass) {
  auto cfg = tiny_config();
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.causal_kernel = 5;
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 21);
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len(7, 140), piece(1, 23);
  for (int u = 0; u < 20; ++u) {
    const auto x = random_features<float>(rng, static_cast<std::size_t>(len(rng)), 4);
    const auto ref = masked_pass(model, params, x, GetParam());
    StreamingEncoder<float> s(model, params, GetParam());
    std::size_t fed = 0;
    while (fed < x.rows()) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(piece(rng)), x.rows() - fed);
      s.accept(Tensor<float>(Shape{n, 4}, std::vector<float>(x.data().begin() + fed * 4,
                                                               x.data().begin() + (fed + n) * 4)));
      fed += n;
      // whatever has been emitted is final
      if (s.bottom_frames() > 0) {
        for (std::size_t i = 0; i < s.bottom().size(); ++i) ASSERT_NEAR(s.bottom()[i], ref.bottom[i], 1e-5);
      }
    }
    s.finish();
    EXPECT_LE(max_abs_diff(s.bottom(), ref.bottom), 1e-5);
    EXPECT_LE(max_abs_diff(s.top(), ref.top), 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(Chunks, StreamingEquivalence,
                         ::testing::Values(ChunkSpec{4, 24}, ChunkSpec{2, 2}, ChunkSpec{3, 7}, ChunkSpec{1, 1},
                                           ChunkSpec{1, 6}, ChunkSpec{16, 16}),
                         [](const auto& info) {
                           return std::to_string(info.param.bottom_chunk) + "_" +
                                  std::to_string(info.param.top_chunk);
                         });

TEST(StreamingEncoder, EmitsWholeChunks) {
  const auto cfg = tiny_config();
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 1);
  std::mt19937_64 rng(1);
  StreamingEncoder<float> s(model, params, ChunkSpec{4, 8});
  s.accept(random_features<float>(rng, required_input_frames(3), 4));
  EXPECT_EQ(s.bottom_frames(), 0u);
  s.accept(random_features<float>(rng, 4, 4));
  EXPECT_EQ(s.bottom_frames(), 4u);
  EXPECT_EQ(s.top_frames(), 0u);
  s.accept(random_features<float>(rng, 16, 4));
  EXPECT_EQ(s.bottom_frames(), 8u);
  EXPECT_EQ(s.top_frames(), 8u);
  s.accept(random_features<float>(rng, 4, 4));
  s.finish();
  EXPECT_TRUE(s.finished());
  EXPECT_EQ(s.bottom_frames(), 9u);
  EXPECT_EQ(s.top_frames(), 9u);
  EXPECT_THROW(s.accept(random_features<float>(rng, 1, 4)), ContractError);
}

TEST(StreamingEncoder, RejectsFullContext) {
  const auto cfg = tiny_config();
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 1);
  EXPECT_THROW(StreamingEncoder<float>(model, params, ChunkSpec::full()), ConfigError);
}

TEST(StreamingEncoder, CausalityPerturbationIsBitExact) {
  const auto cfg = tiny_config();
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 4);
  std::mt19937_64 rng(5);
  for (int u = 0; u < 10; ++u) {
    const auto x = random_features<float>(rng, 120, 4);
    auto y = x;
    const std::size_t cut = required_input_frames(8);  // two bottom chunks of 4
    for (std::size_t r = cut; r < 120; ++r)
      for (std::size_t c = 0; c < 4; ++c) y.at(r, c) *= -3.0f;
    StreamingEncoder<float> a(model, params, ChunkSpec{4, 24}), b(model, params, ChunkSpec{4, 24});
    a.accept(x);
    b.accept(y);
    a.finish();
    b.finish();
    for (std::size_t i = 0; i < 8 * 8; ++i) ASSERT_EQ(a.bottom()[i], b.bottom()[i]);
  }
}

}  // namespace
}  // namespace streamasr
