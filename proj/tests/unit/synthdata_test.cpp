#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "streamasr/errors.hpp"
#include "streamasr/io/files.hpp"
#include "streamasr/synthdata/corpus.hpp"

namespace streamasr {
namespace {

SynthParams noiseless() {
  SynthParams p;
  p.snr_db = std::numeric_limits<double>::infinity();
  return p;
}

TEST(Synth, SingleTokenNoiselessEqualsTemplate) {
  const SynthParams p = noiseless();
  const TokenInventory inv(p, 5);
  std::mt19937_64 rng(1);
  for (int token = 1; token <= p.token_count(); ++token) {
    const std::vector<int> tokens{token};
    const Utterance u = render_utterance(rng, inv, tokens, p);
    const auto& pat = inv.pattern(token);
    ASSERT_EQ(u.spans.size(), 1u);
    const auto start = static_cast<std::size_t>(u.spans[0].start_ms / p.frame_shift_ms);
    EXPECT_EQ(u.spans[0].end_ms - u.spans[0].start_ms, static_cast<double>(pat.rows()) * p.frame_shift_ms);
    for (std::size_t f = 0; f < u.frames(); ++f) {
      const bool inside = f >= start && f < start + pat.rows();
      for (std::size_t c = 0; c < u.features.cols(); ++c) {
        ASSERT_EQ(u.features.at(f, c), inside ? pat.at(f - start, c) : 0.0f) << f << "," << c;
      }
    }
  }
}

TEST(Synth, TemplateDurationsWithinBounds) {
  SynthParams p;
  p.min_token_frames = 8;
  p.max_token_frames = 16;
  const TokenInventory inv(p, 9);
  for (int t = 1; t <= p.token_count(); ++t) {
    EXPECT_GE(inv.pattern(t).rows(), 8u);
    EXPECT_LE(inv.pattern(t).rows(), 16u);
    EXPECT_NE(inv.successor(t), t);
  }
  EXPECT_THROW(inv.pattern(0), ContractError);
  EXPECT_THROW(inv.pattern(p.vocab_size - 1), ContractError);
}

TEST(Synth, SameSeedSameCorpus) {
  const SynthParams p;
  const Corpus a = generate_corpus(3, 20, 5, 5, p), b = generate_corpus(3, 20, 5, 5, p);
  EXPECT_EQ(manifest_digest(a), manifest_digest(b));
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].tokens, b.train[i].tokens);
    EXPECT_TRUE(std::ranges::equal(a.train[i].features.data(), b.train[i].features.data()));
  }
  EXPECT_NE(manifest_digest(a), manifest_digest(generate_corpus(4, 20, 5, 5, p)));
}

TEST(Synth, PrefixOfLargerCorpusIsStable) {
  const SynthParams p;
  const Corpus small = generate_corpus(3, 10, 2, 0, p), big = generate_corpus(3, 30, 2, 0, p);
  for (std::size_t i = 0; i < small.train.size(); ++i) EXPECT_EQ(small.train[i].tokens, big.train[i].tokens);
}

TEST(Synth, SpansValidAndSequencesDisjointAcrossSplits) {
  SynthParams p;
  p.bigram_strength = 0.5;
  const Corpus c = generate_corpus(11, 200, 50, 50, p);
  std::set<std::vector<int>> seen[3];
  for (Split s : {Split::train, Split::dev, Split::test}) {
    for (const auto& u : c.split(s)) {
      EXPECT_NO_THROW(u.validate());
      EXPECT_EQ(u.split, s);
      EXPECT_GE(static_cast<int>(u.tokens.size()), p.min_tokens);
      EXPECT_LE(static_cast<int>(u.tokens.size()), p.max_tokens);
      for (int t : u.tokens) {
        EXPECT_GE(t, 1);
        EXPECT_LE(t, p.vocab_size - 2);
      }
      EXPECT_LE(u.spans.back().end_ms, u.duration_ms());
      seen[static_cast<int>(s)].insert(u.tokens);
    }
  }
  for (const auto& t : seen[1]) {
    EXPECT_FALSE(seen[0].count(t));
    EXPECT_FALSE(seen[2].count(t));
  }
}

TEST(Synth, InvalidUtterancesRejected) {
  Utterance u;
  u.features = Tensor<float>(Shape{10, 2});
  EXPECT_THROW(u.validate(), ContractError);
  u.tokens = {1, 2};
  u.spans = {{0, 50}, {40, 80}};
  EXPECT_THROW(u.validate(), ContractError);
  u.spans = {{0, 50}, {50, 120}};
  EXPECT_THROW(u.validate(), ContractError);
  u.spans = {{0, 50}, {50, 100}};
  EXPECT_NO_THROW(u.validate());
  SynthParams bad;
  bad.min_tokens = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Synth, UnigramFrequenciesMatchConfiguration) {
  SynthParams p;
  p.vocab_size = 7;
  p.unigram = {5, 4, 3, 2, 1};
  const TokenInventory inv(p, 2);
  std::mt19937_64 rng(77);
  const int n = 10000;
  const auto tokens = sample_tokens(rng, inv, p, n);
  const auto dist = p.token_distribution();
  double tv = 0.0;
  for (int t = 1; t <= p.token_count(); ++t) {
    const double freq = static_cast<double>(std::count(tokens.begin(), tokens.end(), t)) / n;
    tv += 0.5 * std::abs(freq - dist[static_cast<std::size_t>(t - 1)]);
  }
  EXPECT_LE(tv, 0.05);
}

TEST(Synth, NoiselessFramesLinearlySeparable) {
  const SynthParams p = noiseless();
  const Corpus c = generate_corpus(21, 30, 0, 0, p);
  const TokenInventory inv(p, c.seed);
  std::size_t frames = 0;
  for (const auto& u : c.train) {
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const auto begin = static_cast<std::size_t>(u.spans[i].start_ms / p.frame_shift_ms);
      const auto end = static_cast<std::size_t>(u.spans[i].end_ms / p.frame_shift_ms);
      for (std::size_t f = begin; f < end; ++f) {
        int best = 0;
        double best_score = -INFINITY;
        for (int k = 1; k <= p.token_count(); ++k) {
          const auto w = inv.direction(k);
          double s = 0.0;
          for (std::size_t d = 0; d < w.size(); ++d) s += w[d] * u.features.at(f, d);
          if (s > best_score) {
            best_score = s;
            best = k;
          }
        }
        ASSERT_EQ(best, u.tokens[i]) << u.id << " frame " << f;
        ++frames;
      }
    }
  }
  EXPECT_GT(frames, 1000u);
}

}  // namespace
}  // namespace streamasr
