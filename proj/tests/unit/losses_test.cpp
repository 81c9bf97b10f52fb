#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "streamasr/errors.hpp"
#include "streamasr/losses/losses.hpp"

namespace streamasr {
namespace {

using testing::random_features;
using testing::tiny_config;

Tensor<double> uniform_logprobs(std::size_t frames, std::size_t vocab) {
  Tensor<double> t(Shape{frames, vocab});
  for (auto& v : t.data()) v = -std::log(static_cast<double>(vocab));
  return t;
}

TEST(Ctc, Examples) {
  const std::vector<int> ab{1, 2};
  EXPECT_NEAR(ctc_negative_log_likelihood(uniform_logprobs(2, 3), ab), std::log(9.0), 1e-12);
  EXPECT_NEAR(std::log(9.0), 2.19722, 1e-5);
  auto lp = Tensor<double>::matrix(1, 3, {std::log(0.2), std::log(0.5), std::log(0.3)});
  EXPECT_NEAR(ctc_negative_log_likelihood(lp, std::vector<int>{}), -std::log(0.2), 1e-15);
  EXPECT_THROW(ctc_negative_log_likelihood(uniform_logprobs(2, 3), std::vector<int>{1, 1}), InfeasibleAlignment);
  EXPECT_NO_THROW(ctc_negative_log_likelihood(uniform_logprobs(3, 3), std::vector<int>{1, 1}));
  EXPECT_EQ(ctc_min_frames(std::vector<int>{1, 1, 2, 2, 2}), 8u);
}

TEST(Ctc, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> frames(1, 6), vocab(2, 4), length(0, 3);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const auto T = static_cast<std::size_t>(frames(rng));
    const int V = vocab(rng);
    const auto lp = testing::random_logprobs(rng, T, static_cast<std::size_t>(V));
    std::vector<int> labels(static_cast<std::size_t>(length(rng)));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(1, V - 1)(rng);
    const double oracle = testing::brute_force_ctc(lp, labels);
    if (!std::isfinite(oracle)) {
      EXPECT_THROW(ctc_negative_log_likelihood(lp, labels), InfeasibleAlignment);
      continue;
    }
    EXPECT_NEAR(ctc_negative_log_likelihood(lp, labels), oracle, 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> frames(2, 6), vocab(2, 4), length(1, 3);
  for (int i = 0; i < 40; ++i) {
    const auto T = static_cast<std::size_t>(frames(rng));
    const int V = vocab(rng);
    std::vector<int> labels(static_cast<std::size_t>(length(rng)));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(1, V - 1)(rng);
    if (ctc_min_frames(labels) > T) continue;
    Tensor<double> logits(Shape{T, static_cast<std::size_t>(V)});
    std::normal_distribution<double> g(0.0, 1.5);
    for (auto& v : logits.data()) v = g(rng);
    auto r = testing::check_gradients(
        [&](Tape<double>&, const std::vector<Var<double>>& x) { return ctc_loss(ops::log_softmax(x[0]), labels); },
        {logits});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(Aed, Examples) {
  Tape<double> tape;
  const std::vector<int> targets{2, 0, 3};
  auto uniform = tape.leaf(Tensor<double>(Shape{3, 4}));
  EXPECT_NEAR(aed_loss(uniform, targets, 0.0).value().item(), std::log(4.0), 1e-14);
  EXPECT_NEAR(aed_loss(uniform, targets, 0.01).value().item(), std::log(4.0), 1e-14);
  Tensor<double> peaked(Shape{3, 4});
  for (std::size_t t = 0; t < 3; ++t) peaked.at(t, static_cast<std::size_t>(targets[t])) = 60.0;
  EXPECT_LT(aed_loss(tape.leaf(peaked), targets, 0.0).value().item(), 1e-20);
  // smoothed floor: the off-target ε/(V-1) mass pays 60 nats each
  const double eps = 0.01;
  const double floor = eps * 60.0 - (1 - eps) * std::log1p(3 * std::exp(-60.0)) + eps * std::log1p(3 * std::exp(-60.0));
  EXPECT_NEAR(aed_loss(tape.leaf(peaked), targets, eps).value().item(), floor, 1e-12);
}

TEST(Aed, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    Tensor<double> logits(Shape{4, 5});
    for (auto& v : logits.data()) v = g(rng);
    const std::vector<int> targets{1, 4, 0, 2};
    double expect = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      const auto row = logits.row(t);
      expect += testing::smoothed_ce(std::vector<double>(row.begin(), row.end()), targets[t], 0.01);
    }
    Tape<double> tape;
    EXPECT_NEAR(aed_loss(tape.leaf(logits), targets, 0.01).value().item(), expect / 4.0, 1e-12);
    auto r = testing::check_gradients(
        [&](Tape<double>&, const std::vector<Var<double>>& x) { return aed_loss(x[0], targets, 0.01); }, {logits});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(AsrLoss, Combination) {
  LossWeights w;
  EXPECT_NEAR(combine_asr(1, 2, 3, w), 1.91, 1e-12);
  w.lambda = 1.0;
  EXPECT_EQ(combine_asr(1, 2, 3, w), 1.0);
  w.lambda = 0.0;
  w.alpha = 0.0;
  EXPECT_EQ(combine_asr(1, 2, 3, w), 2.0);
  const auto c = asr_coefficients(LossWeights{});
  EXPECT_NEAR(c.ctc, 0.3, 1e-15);
  EXPECT_NEAR(c.l2r, 0.49, 1e-15);
  EXPECT_NEAR(c.r2l, 0.21, 1e-15);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_EQ(w.lambda, 0.3);
  EXPECT_EQ(w.alpha, 0.3);
  EXPECT_EQ(w.beta, 0.02);
  EXPECT_EQ(w.label_smoothing, 0.01);
  w.lambda = 1.5;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.beta = -1;
  EXPECT_THROW(w.validate(), ConfigError);
  EXPECT_THROW(parse_distill_variant("D3"), ConfigError);
}

class ModelLoss : public ::testing::Test {
 protected:
  ModelConfig cfg = tiny_config();
  Model<double> model{cfg};
  ParameterSet<double> params = init_parameters<double>(cfg, 11);
  std::mt19937_64 rng{12};
  Tensor<double> x = random_features(rng, 31, 4);
  std::vector<int> labels{1, 3};
};

TEST_F(ModelLoss, AsrLossTermsCombine) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode(p, x, EncoderMode::non_streaming, ChunkSpec::full());
  const LossWeights w;
  const auto t = asr_loss(model, p, enc.x_ns_h, CtcTap::top_full, labels, w);
  EXPECT_NEAR(t.total.value().item(),
              combine_asr(t.ctc.value().item(), t.l2r.value().item(), t.r2l.value().item(), w), 1e-12);
}

TEST_F(ModelLoss, JointLossOfIdenticalTapsIsThreeTimesOne) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  auto enc = model.encode(p, x, EncoderMode::non_streaming, ChunkSpec::full());
  enc.x_s_l = enc.x_s_h = enc.x_ns_h;
  auto c3 = init_parameters<double>(tiny_config(CtcSharing::c3), 11);
  Tape<double> t3;
  BoundParameters<double> p3(c3, t3);
  auto e3 = model.encode(p3, x, EncoderMode::non_streaming, ChunkSpec::full());
  e3.x_s_l = e3.x_s_h = e3.x_ns_h;
  const LossWeights w;
  const double one = asr_loss(model, p3, e3.x_ns_h, CtcTap::top_full, labels, w).total.value().item();
  EXPECT_NEAR(joint_loss(model, p3, e3, labels, w).total.value().item(), 3.0 * one, 1e-10);
}

TEST_F(ModelLoss, AblationDropsNonStreamingTerm) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode_joint(p, x, ChunkSpec{2, 4});
  LossWeights w;
  const auto full = joint_loss(model, p, enc, labels, w);
  w.use_nonstreaming_loss = false;
  const auto ablated = joint_loss(model, p, enc, labels, w);
  EXPECT_NEAR(full.total.value().item() - ablated.total.value().item(), full.full_top.total.value().item(), 1e-10);
  EXPECT_FALSE(ablated.full_top.total.valid());
}

TEST_F(ModelLoss, JointGradientReachesBothConvBranches) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode_joint(p, x, ChunkSpec{2, 4});
  tape.backward(joint_loss(model, p, enc, labels, LossWeights{}).total);
  Gradients<double> g;
  p.accumulate_gradients(g);
  for (const char* k : {"enc.base0.conv.causal.kernel", "enc.base0.conv.centered.kernel"}) {
    ASSERT_TRUE(g.count(k)) << k;
    double norm = 0.0;
    for (double v : g.at(k).data()) norm += v * v;
    EXPECT_GT(norm, 0.0) << k;
  }
}

TEST_F(ModelLoss, StreamingOnlyBatchLeavesCenteredKernelsWithoutGradient) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode(p, x, EncoderMode::streaming, ChunkSpec{2, 4});
  LossWeights w;
  w.use_nonstreaming_loss = false;
  tape.backward(joint_loss(model, p, enc, labels, w).total);
  Gradients<double> g;
  p.accumulate_gradients(g);
  for (const auto& [path, grad] : g) {
    if (path.find("conv.centered") == std::string::npos) continue;
    for (double v : grad.data()) EXPECT_EQ(v, 0.0) << path;
  }
}

EncoderOutputs<double> fake_taps(Tape<double>& tape, const Tensor<double>& student, const Tensor<double>& teacher) {
  EncoderOutputs<double> e;
  e.frames = student.rows();
  e.bottom_layers = 1;
  e.x_s_l = tape.leaf(student, true);
  e.x_s_h = tape.leaf(teacher);
  e.x_ns_h = tape.leaf(teacher, true);
  e.streaming_layers = {e.x_s_l, e.x_s_h};
  e.full_layers = {e.x_ns_h, e.x_ns_h};
  return e;
}

TEST(Distill, Examples) {
  Tape<double> tape;
  auto same = fake_taps(tape, Tensor<double>::matrix(1, 1, {0.3}), Tensor<double>::matrix(1, 1, {0.3}));
  EXPECT_EQ(distill_loss(same, DistillVariant::d1).value().item(), 0.0);
  auto half = fake_taps(tape, Tensor<double>::matrix(1, 1, {0.5}), Tensor<double>::matrix(1, 1, {0.0}));
  EXPECT_EQ(distill_loss(half, DistillVariant::d1).value().item(), 0.125);
  auto two = fake_taps(tape, Tensor<double>::matrix(1, 1, {0.0}), Tensor<double>::matrix(1, 1, {2.0}));
  EXPECT_EQ(distill_loss(two, DistillVariant::d1).value().item(), 1.5);
}

TEST(Distill, SymmetryAndFrameScaling) {
  Tape<double> tape;
  const auto a = Tensor<double>::matrix(2, 2, {0.2, -1.5, 3.0, 0.0});
  const auto b = Tensor<double>::matrix(2, 2, {-0.4, 0.5, 1.0, 0.7});
  const double ab = distill_loss(fake_taps(tape, a, b), DistillVariant::d1).value().item();
  const double ba = distill_loss(fake_taps(tape, b, a), DistillVariant::d1).value().item();
  EXPECT_EQ(ab, ba);
  auto twice = [](const Tensor<double>& t) {
    std::vector<double> v(t.data().begin(), t.data().end());
    v.insert(v.end(), t.data().begin(), t.data().end());
    return Tensor<double>(Shape{2 * t.rows(), t.cols()}, v);
  };
  EXPECT_NEAR(distill_loss(fake_taps(tape, twice(a), twice(b)), DistillVariant::d1).value().item(), ab, 1e-15);
}

TEST(Distill, NoGradientToTeacher) {
  Tape<double> tape;
  auto e = fake_taps(tape, Tensor<double>::matrix(1, 2, {0.5, 3}), Tensor<double>::matrix(1, 2, {0, 0}));
  tape.backward(distill_loss(e, DistillVariant::d1));
  EXPECT_EQ(*tape.grad(e.x_s_l), Tensor<double>::matrix(1, 2, {0.5, 1.0}));
  const Tensor<double>* tg = tape.grad(e.x_ns_h);
  if (tg) {
    for (double v : tg->data()) EXPECT_EQ(v, 0.0);
  }
}

TEST_F(ModelLoss, DistillVariantsPairLayers) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode_joint(p, x, ChunkSpec{2, 4});
  const double d1 = distill_loss(enc, DistillVariant::d1).value().item();
  const double d2 = distill_loss(enc, DistillVariant::d2).value().item();
  const double n = static_cast<double>(enc.frames);
  auto sl1 = [&](Var<double> s, Var<double> t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.value().size(); ++i) {
      const double r = std::abs(s.value()[i] - t.value()[i]);
      sum += r < 1 ? 0.5 * r * r : r - 0.5;
    }
    return sum;
  };
  const auto& s = enc.streaming_layers;
  const auto& f = enc.full_layers;
  EXPECT_NEAR(d1, sl1(s[2], f[4]) / n, 1e-12);
  EXPECT_NEAR(d2, (sl1(s[2], f[4]) + sl1(s[1], f[3])) / n, 1e-12);
  EXPECT_EQ(s[2].value(), enc.x_s_l.value());
  EXPECT_EQ(f[4].value(), enc.x_ns_h.value());
}

TEST_F(ModelLoss, Stage2Combination) {
  Tape<double> tape;
  BoundParameters<double> p(params, tape);
  const auto enc = model.encode_joint(p, x, ChunkSpec{2, 4});
  LossWeights w;
  w.beta = 0.0;
  const auto zero = stage2_loss(model, p, enc, labels, w);
  EXPECT_EQ(zero.total.value().item(), joint_loss(model, p, enc, labels, w).total.value().item());
  w.beta = 0.05;
  const auto s = stage2_loss(model, p, enc, labels, w);
  EXPECT_NEAR(s.total.value().item(), s.joint.total.value().item() + 0.05 * s.distill.value().item(), 1e-12);
}

// Analytic gradients of the full stage-2 objective against central
// differences. The teacher is held at its base-point value, as the
// objective defines it.
TEST_F(ModelLoss, Stage2GradientMatchesFiniteDifferences) {
  LossWeights w;
  w.beta = 0.05;
  const ChunkSpec chunk{2, 4};
  std::vector<Tensor<double>> teacher;
  {
    Tape<double> tape;
    BoundParameters<double> p(params, tape);
    for (const auto& v : model.encode_joint(p, x, chunk).full_layers) teacher.push_back(v.value());
  }
  auto r = testing::check_parameter_gradients(
      [&](BoundParameters<double>& p) {
        const auto enc = model.encode_joint(p, x, chunk);
        auto fixed = enc;
        for (std::size_t i = 0; i < teacher.size(); ++i) fixed.full_layers[i] = p.tape().leaf(teacher[i]);
        fixed.x_ns_h = fixed.full_layers.back();
        auto joint = joint_loss(model, p, enc, labels, w).total;
        return ops::add(joint, ops::scale(distill_loss(fixed, w.distill_variant), w.beta));
      },
      params);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  RecordProperty("checked", std::to_string(r.checked));
}

}  // namespace
}  // namespace streamasr
