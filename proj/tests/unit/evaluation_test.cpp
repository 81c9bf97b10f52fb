#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "streamasr/errors.hpp"
#include "streamasr/evaluation/metrics.hpp"

namespace streamasr {
namespace {

// Plain recursive definition, memoized.
std::size_t recursive_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    if (memo[i][j] >= 0) return static_cast<std::size_t>(memo[i][j]);
    const std::size_t r = std::min({go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (a[i - 1] != b[j - 1])});
    memo[i][j] = static_cast<long>(r);
    return r;
  };
  return go(a.size(), b.size());
}

TEST(EditDistance, Examples) {
  using V = std::vector<int>;
  EXPECT_EQ(edit_distance(V{1, 2, 3}, V{1, 2, 3}), 0u);
  EXPECT_EQ(edit_distance(V{1, 2, 3}, V{}), 3u);
  EXPECT_EQ(edit_distance(V{}, V{4, 4}), 2u);
  EXPECT_EQ(edit_distance(V{1, 2, 3}, V{1, 3}), 1u);
  EXPECT_EQ(edit_distance(V{1, 2, 3}, V{3, 2, 1}), 2u);
  EXPECT_DOUBLE_EQ(cer(V{1, 2, 3, 4}, V{1, 2, 5, 4, 6}), 0.5);
  EXPECT_THROW(cer(V{}, V{1}), ContractError);
}

TEST(EditDistance, MatchesRecursiveDefinition) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(0, 8), tok(1, 4);
  for (int i = 0; i < 300; ++i) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = tok(rng);
    for (auto& x : b) x = tok(rng);
    ASSERT_EQ(edit_distance(a, b), recursive_distance(a, b));
    ASSERT_EQ(edit_distance(a, b), edit_distance(b, a));
  }
}

TEST(AlignMatches, MatchesAreExactAndMonotone) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 8), tok(1, 3);
  for (int i = 0; i < 300; ++i) {
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = tok(rng);
    for (auto& x : b) x = tok(rng);
    const auto m = align_matches(a, b);
    long last = -1;
    std::size_t matched = 0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (m[k] < 0) continue;
      ASSERT_EQ(a[k], b[static_cast<std::size_t>(m[k])]);
      ASSERT_GT(m[k], last);
      last = m[k];
      ++matched;
    }
    // a minimum-cost alignment never has fewer matches than edits allow
    ASSERT_GE(matched + edit_distance(a, b), std::max(a.size(), b.size()));
  }
  EXPECT_EQ(align_matches(std::vector<int>{1, 2, 3}, std::vector<int>{1, 3}), (std::vector<long>{0, -1, 1}));
}

TEST(Percentile, NearestRank) {
  const std::vector<double> v{15, 20, 35, 40, 50};
  EXPECT_EQ(percentile(v, 50), 35);
  EXPECT_EQ(percentile(v, 90), 50);
  EXPECT_EQ(percentile(v, 30), 20);
  EXPECT_EQ(percentile(v, 0), 15);
  EXPECT_EQ(percentile(v, 100), 50);
  EXPECT_EQ(percentile({7}, 90), 7);
  EXPECT_EQ(percentile({4, 1, 3, 2}, 50), 2);
  EXPECT_THROW(percentile({}, 50), ContractError);
  EXPECT_THROW(percentile({1}, 101), ContractError);
}

TEST(ModelLatency, HalfChunk) {
  EXPECT_EQ(model_latency_ms(4), 80.0);
  EXPECT_EQ(model_latency_ms(16), 320.0);
  EXPECT_EQ(model_latency_ms(1), 20.0);
  EXPECT_THROW(model_latency_ms(0), ContractError);
}

PartialResult partial(std::vector<int> tokens, std::vector<double> seen) {
  PartialResult p;
  p.audio_ms = seen.empty() ? 0.0 : seen.back();
  p.tokens = std::move(tokens);
  p.first_seen_ms = std::move(seen);
  return p;
}

TEST(EmissionDelays, FirstAndLastToken) {
  const std::vector<int> ref{3, 5, 7};
  const std::vector<TokenSpan> spans{{100, 300}, {300, 500}, {500, 700}};
  const auto u = emission_delays("u", ref, spans, partial({3, 5, 7}, {160, 480, 800}));
  EXPECT_TRUE(u.included);
  EXPECT_EQ(u.ftd_ms, 60.0);
  EXPECT_EQ(u.ltd_ms, 300.0);
  ASSERT_EQ(u.records.size(), 3u);
  EXPECT_EQ(u.records[1].emitted_ms - u.records[1].truth_ms, 180.0);
}

TEST(EmissionDelays, SubstitutionInMiddleStillIncluded) {
  const std::vector<int> ref{3, 5, 7};
  const std::vector<TokenSpan> spans{{0, 200}, {200, 400}, {400, 600}};
  const auto u = emission_delays("u", ref, spans, partial({3, 6, 7}, {160, 320, 640}));
  EXPECT_TRUE(u.included);
  EXPECT_EQ(u.records.size(), 2u);
  EXPECT_EQ(u.ltd_ms, 240.0);
}

TEST(EmissionDelays, Exclusions) {
  const std::vector<int> ref{3, 5, 7};
  const std::vector<TokenSpan> spans{{0, 200}, {200, 400}, {400, 600}};
  EXPECT_EQ(emission_delays("a", ref, spans, partial({5, 7}, {320, 640})).excluded_reason, "first token missing");
  EXPECT_EQ(emission_delays("b", ref, spans, partial({3, 5}, {160, 320})).excluded_reason, "last token missing");
  const auto c = emission_delays("c", ref, spans, partial({3, 1, 2, 4, 5, 7}, {1, 2, 3, 4, 5, 6}));
  EXPECT_FALSE(c.included);
  EXPECT_EQ(c.excluded_reason, "cer above threshold");
  EXPECT_THROW(emission_delays("d", ref, std::vector<TokenSpan>{{0, 1}}, partial({3}, {1})), ContractError);
}

TEST(Summaries, LatencyAndQuality) {
  std::vector<UtteranceLatency> us(4);
  const double ftd[] = {40, 10, 30, 20}, ltd[] = {400, 100, 300, 200};
  for (int i = 0; i < 4; ++i) {
    us[static_cast<std::size_t>(i)].included = i != 3;
    us[static_cast<std::size_t>(i)].ftd_ms = ftd[i];
    us[static_cast<std::size_t>(i)].ltd_ms = ltd[i];
  }
  const auto r = summarize_latency(us);
  EXPECT_EQ(r.included, 3u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.ftd_p50, 30);
  EXPECT_EQ(r.ltd_p90, 400);
  for (auto& u : us) u.included = false;
  EXPECT_TRUE(std::isnan(summarize_latency(us).ltd_p50));

  std::vector<ScoredUtterance> q(2);
  q[0] = {{1, 2, 3}, {1, 2, 3}, {1, 2}, {1, 2}, {}};
  q[1] = {{4}, {4}, {4}, {5}, {4}};
  const auto s = summarize_quality(q);
  EXPECT_EQ(s.ref_tokens, 4u);
  EXPECT_DOUBLE_EQ(s.cer_rescore, 0.0);
  EXPECT_DOUBLE_EQ(s.cer_top_beam, 0.25);
  EXPECT_DOUBLE_EQ(s.cer_top_greedy, 0.5);
  EXPECT_DOUBLE_EQ(s.cer_bottom_greedy, 0.75);
}

}  // namespace
}  // namespace streamasr
