#include "streamasr/io/files.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "streamasr/errors.hpp"
#include "streamasr/io/checkpoint.hpp"
#include "streamasr/io/run_config.hpp"

namespace streamasr {

using nlohmann::json;

namespace {

json stamp_json(const Stamp& s) {
  return {{"command", s.command}, {"config_hash", s.config_hash}, {"seed", s.seed}, {"code_version", s.code_version}};
}

std::string join_tokens(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out += (i ? " " : "") + std::to_string(tokens[i]);
  return out;
}

std::vector<int> split_tokens(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  int t = 0;
  while (is >> t) out.push_back(t);
  return out;
}

json synth_json(const SynthParams& p) {
  return {{"vocab_size", p.vocab_size},
          {"feat_dim", p.feat_dim},
          {"frame_shift_ms", p.frame_shift_ms},
          {"min_tokens", p.min_tokens},
          {"max_tokens", p.max_tokens},
          {"min_token_frames", p.min_token_frames},
          {"max_token_frames", p.max_token_frames},
          {"min_gap_frames", p.min_gap_frames},
          {"max_gap_frames", p.max_gap_frames},
          {"min_edge_frames", p.min_edge_frames},
          {"max_edge_frames", p.max_edge_frames},
          {"snr_db", p.snr_db},
          {"onset_fraction", p.onset_fraction},
          {"onset_level", p.onset_level},
          {"bigram_strength", p.bigram_strength},
          {"unigram", p.unigram}};
}

SynthParams synth_from_json(const json& j) {
  SynthParams p;
  p.vocab_size = j.at("vocab_size");
  p.feat_dim = j.at("feat_dim");
  p.frame_shift_ms = j.at("frame_shift_ms");
  p.min_tokens = j.at("min_tokens");
  p.max_tokens = j.at("max_tokens");
  p.min_token_frames = j.at("min_token_frames");
  p.max_token_frames = j.at("max_token_frames");
  p.min_gap_frames = j.at("min_gap_frames");
  p.max_gap_frames = j.at("max_gap_frames");
  p.min_edge_frames = j.at("min_edge_frames");
  p.max_edge_frames = j.at("max_edge_frames");
  p.snr_db = j.at("snr_db");
  p.onset_fraction = j.at("onset_fraction");
  p.onset_level = j.at("onset_level");
  p.bigram_strength = j.at("bigram_strength");
  p.unigram = j.at("unigram").get<std::vector<double>>();
  return p;
}

json manifest_line(const Utterance& u) {
  json spans = json::array();
  for (const auto& s : u.spans) spans.push_back({s.start_ms, s.end_ms});
  return {{"id", u.id},
          {"split", std::string(to_string(u.split))},
          {"tokens", join_tokens(u.tokens)},
          {"spans", spans},
          {"frames", u.frames()},
          {"path", "feats/" + u.id + ".f32"}};
}

std::string manifest_text(const Corpus& corpus) {
  std::string out;
  for (Split s : {Split::train, Split::dev, Split::test})
    for (const auto& u : corpus.split(s)) out += manifest_line(u).dump() + "\n";
  return out;
}

std::string spans_error(const std::string& where, const std::exception& e) { return where + ": " + e.what(); }

}  // namespace

void write_features(const Tensor<float>& features, const std::filesystem::path& path) {
  std::string bytes(features.size() * sizeof(float), '\0');
  std::memcpy(bytes.data(), features.data().data(), bytes.size());
  write_file_atomic(path, bytes);
  std::filesystem::path side = path;
  side += ".json";
  write_file_atomic(side, json{{"rows", features.rows()}, {"cols", features.cols()}, {"dtype", "f32le"}}.dump() + "\n");
}

Tensor<float> read_features(const std::filesystem::path& path) {
  std::filesystem::path side = path;
  side += ".json";
  json shape;
  try {
    shape = json::parse(read_file(side));
  } catch (const json::exception& e) {
    throw FormatError(spans_error("feature sidecar " + side.string(), e));
  }
  const auto rows = shape.at("rows").get<std::size_t>(), cols = shape.at("cols").get<std::size_t>();
  const std::string bytes = read_file(path);
  if (bytes.size() != rows * cols * sizeof(float)) {
    throw FormatError("feature file " + path.string() + " has " + std::to_string(bytes.size()) +
                      " bytes, sidecar expects " + std::to_string(rows * cols * sizeof(float)));
  }
  std::vector<float> values(rows * cols);
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return Tensor<float>(Shape{rows, cols}, std::move(values));
}

std::string manifest_digest(const Corpus& corpus) { return fnv1a_hex(manifest_text(corpus)); }

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, const Stamp& stamp) {
  std::filesystem::create_directories(dir / "feats");
  for (Split s : {Split::train, Split::dev, Split::test})
    for (const auto& u : corpus.split(s)) write_features(u.features, dir / "feats" / (u.id + ".f32"));
  const std::string manifest = manifest_text(corpus);
  write_file_atomic(dir / "manifest.jsonl", manifest);
  const json info = {{"seed", corpus.seed},
                     {"params", synth_json(corpus.params)},
                     {"counts", {{"train", corpus.train.size()}, {"dev", corpus.dev.size()}, {"test", corpus.test.size()}}},
                     {"manifest_digest", fnv1a_hex(manifest)},
                     {"stamp", stamp_json(stamp)}};
  write_file_atomic(dir / "corpus.json", info.dump(2) + "\n");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "corpus.json")) {
    throw MissingFileError("no corpus at " + dir.string() + " (corpus.json missing; run gen-data first)");
  }
  Corpus corpus;
  std::string digest;
  try {
    const json info = json::parse(read_file(dir / "corpus.json"));
    corpus.seed = info.at("seed");
    corpus.params = synth_from_json(info.at("params"));
    digest = info.at("manifest_digest");
  } catch (const json::exception& e) {
    throw FormatError(spans_error((dir / "corpus.json").string(), e));
  }
  if (!std::filesystem::exists(dir / "manifest.jsonl")) {
    throw MissingFileError("no manifest at " + (dir / "manifest.jsonl").string());
  }
  const std::string manifest = read_file(dir / "manifest.jsonl");
  if (fnv1a_hex(manifest) != digest) {
    throw ManifestError("manifest.jsonl in " + dir.string() + " does not match the digest in corpus.json");
  }
  std::istringstream is(manifest);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    Utterance u;
    try {
      const json j = json::parse(line);
      u.id = j.at("id");
      u.split = parse_split(j.at("split").get<std::string>());
      u.tokens = split_tokens(j.at("tokens"));
      for (const auto& s : j.at("spans")) u.spans.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
      u.frame_shift_ms = corpus.params.frame_shift_ms;
      u.features = read_features(dir / j.at("path").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(spans_error("manifest line " + std::to_string(line_no), e));
    }
    u.validate();
    corpus.split(u.split).push_back(std::move(u));
  }
  return corpus;
}

DecodeRecord make_record(const Utterance& utt, const DecodeResult& result, const ChunkSpec& chunk) {
  DecodeRecord r;
  r.id = utt.id;
  r.ref = utt.tokens;
  r.spans = utt.spans;
  r.final_tokens = result.final().prefix;
  for (const auto& h : result.nbest) r.nbest.push_back({h.prefix, h.s_ctc, h.s_l2r, h.s_r2l, h.s_final});
  r.partials = result.partials;
  if (!result.nbest.empty()) r.top_beam = result.nbest.front().prefix;
  r.top_greedy = result.top_greedy.tokens;
  r.bottom_greedy = result.bottom_greedy.tokens;
  for (std::size_t i = 0; i < result.bottom_greedy.tokens.size(); ++i) {
    r.spikes.push_back(
        {result.bottom_greedy.spike_frames[i], result.bottom_greedy.tokens[i], result.bottom_greedy.spike_logprobs[i]});
  }
  r.chunk = chunk.to_string();
  r.encoder_frames = result.encoder_frames;
  return r;
}

std::string to_json_line(const DecodeRecord& r, const Stamp& stamp) {
  json spans = json::array();
  for (const auto& s : r.spans) spans.push_back({s.start_ms, s.end_ms});
  json nbest = json::array();
  for (const auto& h : r.nbest) {
    nbest.push_back({{"tokens", h.tokens}, {"s_ctc", h.s_ctc}, {"s_l2r", h.s_l2r}, {"s_r2l", h.s_r2l}, {"s_final", h.s_final}});
  }
  json partials = json::array();
  for (const auto& p : r.partials) {
    partials.push_back({{"ms", p.audio_ms}, {"tokens", p.tokens}, {"first_seen_ms", p.first_seen_ms}});
  }
  json spikes = json::array();
  for (const auto& s : r.spikes) spikes.push_back({{"frame", s.frame}, {"token", s.token}, {"logprob", s.logprob}});
  const json j = {{"id", r.id},
                  {"ref", r.ref},
                  {"spans", spans},
                  {"final", r.final_tokens},
                  {"nbest", nbest},
                  {"partials", partials},
                  {"top_beam", r.top_beam},
                  {"top_greedy", r.top_greedy},
                  {"bottom_greedy", r.bottom_greedy},
                  {"spikes", spikes},
                  {"chunk", r.chunk},
                  {"encoder_frames", r.encoder_frames},
                  {"stamp", stamp_json(stamp)}};
  return j.dump();
}

DecodeRecord parse_json_line(std::string_view line) {
  DecodeRecord r;
  try {
    const json j = json::parse(line);
    r.id = j.at("id");
    r.ref = j.at("ref").get<std::vector<int>>();
    for (const auto& s : j.at("spans")) r.spans.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    r.final_tokens = j.at("final").get<std::vector<int>>();
    for (const auto& h : j.at("nbest")) {
      r.nbest.push_back({h.at("tokens").get<std::vector<int>>(), h.at("s_ctc"), h.at("s_l2r"), h.at("s_r2l"),
                         h.at("s_final")});
    }
    for (const auto& p : j.at("partials")) {
      r.partials.push_back(
          {p.at("ms"), p.at("tokens").get<std::vector<int>>(), p.at("first_seen_ms").get<std::vector<double>>()});
    }
    r.top_beam = j.at("top_beam").get<std::vector<int>>();
    r.top_greedy = j.at("top_greedy").get<std::vector<int>>();
    r.bottom_greedy = j.at("bottom_greedy").get<std::vector<int>>();
    for (const auto& s : j.at("spikes")) r.spikes.push_back({s.at("frame"), s.at("token"), s.at("logprob")});
    r.chunk = j.at("chunk");
    r.encoder_frames = j.at("encoder_frames");
  } catch (const json::exception& e) {
    throw FormatError(std::string("decode record: ") + e.what());
  }
  return r;
}

void write_decode_file(const std::filesystem::path& path, const std::vector<DecodeRecord>& records,
                       const Stamp& stamp) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r, stamp) + "\n";
  write_file_atomic(path, out);
}

std::vector<DecodeRecord> read_decode_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("no such decode file: " + path.string());
  std::vector<DecodeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_quality_report(std::ostream& os, const QualityReport& q, const Stamp& stamp) {
  os << "metric\tvalue\n"
     << "cer_rescore\t" << q.cer_rescore << '\n'
     << "cer_top_beam\t" << q.cer_top_beam << '\n'
     << "cer_top_greedy\t" << q.cer_top_greedy << '\n'
     << "cer_bottom_greedy\t" << q.cer_bottom_greedy << '\n'
     << "utterances\t" << q.utterances << '\n'
     << "ref_tokens\t" << q.ref_tokens << '\n';
  const json j = {{"cer_rescore", q.cer_rescore},       {"cer_top_beam", q.cer_top_beam},
                  {"cer_top_greedy", q.cer_top_greedy}, {"cer_bottom_greedy", q.cer_bottom_greedy},
                  {"utterances", q.utterances},         {"ref_tokens", q.ref_tokens},
                  {"stamp", stamp_json(stamp)}};
  os << "--- json\n" << j.dump(2) << '\n';
}

void write_latency_report(std::ostream& os, const LatencyReport& r, double model_latency, const Stamp& stamp) {
  auto cell = [](double v) {
    std::ostringstream c;
    if (std::isfinite(v)) c << v; else c << "NA";
    return c.str();
  };
  os << "metric\tP50_ms\tP90_ms\n"
     << "FTD\t" << cell(r.ftd_p50) << '\t' << cell(r.ftd_p90) << '\n'
     << "LTD\t" << cell(r.ltd_p50) << '\t' << cell(r.ltd_p90) << '\n'
     << "model_latency_ms\t" << model_latency << '\n'
     << "included\t" << r.included << '\n'
     << "excluded\t" << r.excluded << '\n';
  const json j = {{"ftd_p50", number_or_null(r.ftd_p50)}, {"ftd_p90", number_or_null(r.ftd_p90)},
                  {"ltd_p50", number_or_null(r.ltd_p50)}, {"ltd_p90", number_or_null(r.ltd_p90)},
                  {"model_latency_ms", model_latency},    {"included", r.included},
                  {"excluded", r.excluded},               {"stamp", stamp_json(stamp)}};
  os << "--- json\n" << j.dump(2) << '\n';
}

void write_latency_points(std::ostream& os, std::span<const UtteranceLatency> utterances) {
  os << "id\tincluded\tftd_ms\tltd_ms\treason\n";
  for (const auto& u : utterances) {
    os << u.id << '\t' << (u.included ? 1 : 0) << '\t';
    if (u.included) {
      os << u.ftd_ms << '\t' << u.ltd_ms << '\t' << '-';
    } else {
      os << "NA\tNA\t" << u.excluded_reason;
    }
    os << '\n';
  }
}

void write_spike_dump(std::ostream& os, std::span<const DecodeRecord> records) {
  os << "id\tframe\ttoken\tlogprob\n";
  for (const auto& r : records)
    for (const auto& s : r.spikes) os << r.id << '\t' << s.frame << '\t' << s.token << '\t' << s.logprob << '\n';
}

}  // namespace streamasr
