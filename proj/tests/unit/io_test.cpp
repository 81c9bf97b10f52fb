#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "streamasr/errors.hpp"
#include "streamasr/io/checkpoint.hpp"
#include "streamasr/io/files.hpp"
#include "streamasr/io/run_config.hpp"

namespace streamasr {
namespace {

namespace fs = std::filesystem;
using testing::tiny_config;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("streamasr_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                       "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

using Checkpoints = TempDir;

TEST_F(Checkpoints, BitExactRoundTripForEverySharing) {
  for (auto sharing : {CtcSharing::c1, CtcSharing::c2, CtcSharing::c3}) {
    const auto params = init_parameters<float>(tiny_config(sharing), 3);
    CheckpointMeta meta;
    meta.stage = 2;
    meta.step = 123;
    meta.dev_loss = 1.25;
    meta.config_hash = "abc";
    meta.seed = 9;
    const fs::path path = dir / "m.ckpt";
    save_checkpoint(params, meta, path);
    auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.params, params);
    EXPECT_EQ(loaded.params.aliases(), params.aliases());
    EXPECT_EQ(loaded.meta.step, 123);
    EXPECT_EQ(loaded.meta.dev_loss, 1.25);
    EXPECT_EQ(loaded.meta.config_hash, "abc");

    // a write through the canonical tensor is visible through every alias
    loaded.params.get("ctc.top_full.w").data()[0] = 42.0f;
    const bool bottom_shared = sharing != CtcSharing::c1;
    const bool stream_shared = sharing != CtcSharing::c2;
    EXPECT_EQ(loaded.params.get("ctc.bottom.w").data()[0] == 42.0f, bottom_shared);
    EXPECT_EQ(loaded.params.get("ctc.top_stream.w").data()[0] == 42.0f, stream_shared);
  }
}

TEST_F(Checkpoints, CorruptionDetected) {
  const auto params = init_parameters<float>(tiny_config(), 3);
  const fs::path path = dir / "m.ckpt";
  save_checkpoint(params, {}, path);
  const std::string bytes = read_file(path);

  write_file_atomic(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), FormatError);
  write_file_atomic(dir / "short.ckpt", bytes.substr(0, 10));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), FormatError);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  write_file_atomic(dir / "flip.ckpt", flipped);
  EXPECT_THROW(load_checkpoint(dir / "flip.ckpt"), FormatError);

  std::string magic = bytes;
  magic[0] = 'X';
  write_file_atomic(dir / "magic.ckpt", magic);
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), FormatError);

  std::string version = bytes;
  version[8] = static_cast<char>(kCheckpointVersion + 1);
  write_file_atomic(dir / "version.ckpt", version);
  EXPECT_THROW(load_checkpoint(dir / "version.ckpt"), FormatError);

  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), MissingFileError);
}

TEST_F(Checkpoints, AveragingKeepsBestAndReproducesIdentical) {
  const auto a = init_parameters<float>(tiny_config(CtcSharing::c3), 1);
  std::vector<fs::path> paths;
  for (int i = 0; i < 4; ++i) {
    CheckpointMeta m;
    m.dev_loss = 10.0 - i;
    m.step = i;
    paths.push_back(dir / ("same" + std::to_string(i) + ".ckpt"));
    save_checkpoint(a, m, paths.back());
  }
  const auto avg = average_checkpoints(paths, 3);
  EXPECT_EQ(avg.params, a);
  EXPECT_EQ(avg.params.aliases(), a.aliases());

  const auto b = init_parameters<float>(tiny_config(CtcSharing::c3), 2);
  CheckpointMeta good;
  good.dev_loss = 0.5;
  save_checkpoint(b, good, dir / "best.ckpt");
  const std::vector<fs::path> mixed{paths[0], dir / "best.ckpt", paths[1]};
  EXPECT_EQ(average_checkpoints(mixed, 1).params, b);

  save_checkpoint(init_parameters<float>(tiny_config(CtcSharing::c1), 1), {}, dir / "other.ckpt");
  const std::vector<fs::path> incompatible{paths[0], dir / "other.ckpt"};
  EXPECT_THROW(average_checkpoints(incompatible, 2), FormatError);
}

TEST(RunConfigText, RoundTripAndHash) {
  RunConfig c;
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::parse(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  c.set("loss.beta=0.05");
  EXPECT_NE(c.hash(), back.hash());
  EXPECT_EQ(c.loss.beta, 0.05);
  for (const auto& key : RunConfig::keys()) EXPECT_NE(text.find(key.substr(key.find('.') + 1) + " = "), std::string::npos) << key;
}

TEST(RunConfigText, RejectsUnknownAndMalformed) {
  EXPECT_THROW(RunConfig::parse("[model]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[nosuch]\nn1 = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\nn1 = two\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[model]\nn1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[loss]\nlambda = 1.5\n"), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.set("model.n1"), ConfigError);
  EXPECT_THROW(c.set("n1=2"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/streamasr.cfg"), MissingFileError);
  const RunConfig parsed = RunConfig::parse("# comment\n[model]\nn1 = 3  # trailing\n\n[decode]\nchunk = 16/16\n");
  EXPECT_EQ(parsed.model.n1, 3);
  EXPECT_EQ(parsed.decode.chunk.bottom_chunk, 16);
}

TEST(RunConfigText, EveryExperimentalSettingExpressible) {
  RunConfig c;
  for (const char* s : {"c1", "c2", "c3"}) {
    c.set("model", "ctc_sharing", s);
    EXPECT_EQ(c.model.ctc_sharing, parse_ctc_sharing(s));
  }
  for (const char* chunk : {"4/24", "16/16", "2/12", "full"}) EXPECT_NO_THROW(c.set("decode", "chunk", chunk));
  EXPECT_TRUE(c.decode.chunk.full_context);
  c.set("loss.distill_variant=d2");
  EXPECT_EQ(c.loss.distill_variant, DistillVariant::d2);
  c.set("loss.use_nonstreaming_loss=false");
  EXPECT_FALSE(c.loss.use_nonstreaming_loss);
  c.set("decode.rescore_on_full=true");
  EXPECT_TRUE(c.decode.rescore_on_full);
  c.set("model.n1=2");
  c.set("model.n2=5");
  c.set("model.m=5");
  c.set("model.d_model=256");
  c.set("model.causal_kernel=15");
  c.set("loss.beta=0");
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(parse_model_section(c.model_text()).d_model, 256);
}

using Files = TempDir;

TEST_F(Files, CorpusRoundTripAndIntegrity) {
  SynthParams sp;
  sp.vocab_size = 6;
  sp.feat_dim = 3;
  const Corpus corpus = generate_corpus(5, 6, 2, 2, sp);
  write_corpus(corpus, dir, {"gen-data", "h", 5, "v"});
  const Corpus back = read_corpus(dir);
  EXPECT_EQ(manifest_digest(back), manifest_digest(corpus));
  for (Split s : {Split::train, Split::dev, Split::test}) {
    ASSERT_EQ(back.split(s).size(), corpus.split(s).size());
    for (std::size_t i = 0; i < corpus.split(s).size(); ++i) {
      const auto& a = corpus.split(s)[i];
      const auto& b = back.split(s)[i];
      EXPECT_EQ(a.id, b.id);
      EXPECT_EQ(a.tokens, b.tokens);
      EXPECT_EQ(a.spans, b.spans);
      EXPECT_EQ(a.features, b.features);
    }
  }

  std::ofstream(dir / "manifest.jsonl", std::ios::app) << "{\"id\":\"extra\"}\n";
  EXPECT_THROW(read_corpus(dir), ManifestError);
  fs::remove(dir / "manifest.jsonl");
  EXPECT_THROW(read_corpus(dir), MissingFileError);
}

TEST_F(Files, FeatureShapeChecked) {
  Tensor<float> t(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  write_features(t, dir / "a.f32");
  EXPECT_EQ(read_features(dir / "a.f32"), t);
  std::ofstream(dir / "a.f32", std::ios::binary | std::ios::trunc) << "abcd";
  EXPECT_THROW(read_features(dir / "a.f32"), FormatError);
}

TEST_F(Files, DecodeRecordRoundTrip) {
  DecodeRecord r;
  r.id = "u1";
  r.ref = {1, 2};
  r.spans = {{100, 200}, {250, 330}};
  r.final_tokens = {1, 2};
  r.nbest = {{{1, 2}, -0.5, -1.0, -1.5, -0.9}, {{1}, -2.0, -3.0, -4.0, -3.1}};
  r.partials = {{160, {1}, {160}}, {320, {1, 2}, {160, 320}}};
  r.top_beam = {1, 2};
  r.top_greedy = {1, 2};
  r.bottom_greedy = {1};
  r.spikes = {{3, 1, -0.25}};
  r.chunk = "4/24";
  r.encoder_frames = 8;
  write_decode_file(dir / "d.jsonl", {r, r}, {"decode", "h", 1, "v"});
  const auto back = read_decode_file(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].partials[1].first_seen_ms, r.partials[1].first_seen_ms);
  EXPECT_EQ(back[0].nbest[1].s_final, -3.1);
  EXPECT_EQ(back[0].spikes[0].logprob, -0.25);
  EXPECT_EQ(back[1].spans, r.spans);
  EXPECT_EQ(back[1].chunk, "4/24");
  EXPECT_THROW(parse_json_line("{\"id\": 3"), FormatError);
  EXPECT_THROW(read_decode_file(dir / "none.jsonl"), MissingFileError);
}

TEST(Reports, LatencyReportWritesNullForMissingValues) {
  LatencyReport r;
  r.ftd_p50 = r.ftd_p90 = r.ltd_p50 = r.ltd_p90 = NAN;
  std::ostringstream os;
  write_latency_report(os, r, 80.0, {"latency", "h", 1, "v"});
  const std::string s = os.str();
  EXPECT_NE(s.find("model_latency_ms\t80"), std::string::npos);
  EXPECT_NE(s.find("null"), std::string::npos);
  EXPECT_EQ(s.find("nan"), std::string::npos);
  EXPECT_NE(s.find("LTD\tNA\tNA"), std::string::npos);
}

}  // namespace
}  // namespace streamasr
