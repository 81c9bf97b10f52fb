#include <benchmark/benchmark.h>

#include <random>

#include "streamasr/decoding/decoding.hpp"
#include "streamasr/losses/losses.hpp"
#include "streamasr/model/streaming.hpp"

namespace {

using namespace streamasr;

template <typename T>
Tensor<T> randn(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(g(rng));
  return t;
}

Tensor<float> log_softmax_rows(Tensor<float> t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    float m = t.at(r, 0);
    for (std::size_t c = 1; c < t.cols(); ++c) m = std::max(m, t.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) z += std::exp(static_cast<double>(t.at(r, c) - m));
    const float lz = m + static_cast<float>(std::log(z));
    for (std::size_t c = 0; c < t.cols(); ++c) t.at(r, c) -= lz;
  }
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = randn<float>(rng, {n, n}), b = randn<float>(rng, {n, n});
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(ops::matmul(tape.leaf(a), tape.leaf(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_EncoderForward(benchmark::State& state) {
  ModelConfig cfg;
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 1);
  std::mt19937_64 rng(2);
  const auto x = randn<float>(rng, {static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(cfg.feat_dim)});
  for (auto _ : state) {
    Tape<float> tape;
    BoundParameters<float> p(params, tape);
    benchmark::DoNotOptimize(model.encode(p, x, EncoderMode::streaming, ChunkSpec{4, 24}).frames);
  }
}
BENCHMARK(BM_EncoderForward)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_StreamingEncoder(benchmark::State& state) {
  ModelConfig cfg;
  const Model<float> model(cfg);
  const auto params = init_parameters<float>(cfg, 1);
  std::mt19937_64 rng(3);
  const auto x = randn<float>(rng, {800, static_cast<std::size_t>(cfg.feat_dim)});
  for (auto _ : state) {
    StreamingEncoder<float> enc(model, params, ChunkSpec{4, 24});
    enc.accept(x);
    enc.finish();
    benchmark::DoNotOptimize(enc.top_frames());
  }
}
BENCHMARK(BM_StreamingEncoder)->Unit(benchmark::kMillisecond);

void BM_CtcLossAndGradient(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto logits = randn<double>(rng, {t, 16});
  std::vector<int> labels;
  for (std::size_t i = 0; i < t / 6; ++i) labels.push_back(1 + static_cast<int>(i % 14));
  for (auto _ : state) {
    Tape<double> tape;
    auto x = tape.leaf(logits, true);
    tape.backward(ctc_loss(ops::log_softmax(x), labels));
    benchmark::DoNotOptimize(tape.grad(x));
  }
}
BENCHMARK(BM_CtcLossAndGradient)->Arg(50)->Arg(200);

void BM_PrefixBeam(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto lp = log_softmax_rows(randn<float>(rng, {100, 16}));
  const int beam = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(prefix_beam_search(lp, beam, 10).size());
}
BENCHMARK(BM_PrefixBeam)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
