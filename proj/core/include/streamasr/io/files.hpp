#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "streamasr/decoding/decoding.hpp"
#include "streamasr/evaluation/metrics.hpp"
#include "streamasr/synthdata/corpus.hpp"

namespace streamasr {

/// Written into every output so a result can be traced to its inputs.
struct Stamp {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
};

/// data_dir/feats/<id>.f32 (raw little-endian float32) with a <id>.f32.json
/// shape sidecar, data_dir/manifest.jsonl (one utterance per line) and
/// data_dir/corpus.json (generation parameters, counts, manifest digest).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, const Stamp& stamp);
Corpus read_corpus(const std::filesystem::path& dir);
/// Digest of the manifest as written by write_corpus.
std::string manifest_digest(const Corpus& corpus);

void write_features(const Tensor<float>& features, const std::filesystem::path& path);
Tensor<float> read_features(const std::filesystem::path& path);

struct NBestEntry {
  std::vector<int> tokens;
  double s_ctc = 0.0, s_l2r = 0.0, s_r2l = 0.0, s_final = 0.0;
};

struct Spike {
  std::size_t frame = 0;
  int token = 0;
  double logprob = 0.0;
};

/// One line of a decode output file.
struct DecodeRecord {
  std::string id;
  std::vector<int> ref;
  std::vector<TokenSpan> spans;
  std::vector<int> final_tokens;
  std::vector<NBestEntry> nbest;
  std::vector<PartialResult> partials;
  std::vector<int> top_beam;  ///< first-pass best
  std::vector<int> top_greedy;
  std::vector<int> bottom_greedy;
  std::vector<Spike> spikes;  ///< bottom-tap greedy spikes
  std::string chunk;
  std::size_t encoder_frames = 0;
};

DecodeRecord make_record(const Utterance& utt, const DecodeResult& result, const ChunkSpec& chunk);

std::string to_json_line(const DecodeRecord& record, const Stamp& stamp);
DecodeRecord parse_json_line(std::string_view line);

void write_decode_file(const std::filesystem::path& path, const std::vector<DecodeRecord>& records, const Stamp& stamp);
std::vector<DecodeRecord> read_decode_file(const std::filesystem::path& path);

/// Tab-separated `metric<TAB>value` lines followed by a JSON block.
void write_quality_report(std::ostream& os, const QualityReport& q, const Stamp& stamp);
void write_latency_report(std::ostream& os, const LatencyReport& r, double model_latency, const Stamp& stamp);
/// id, included, ftd_ms, ltd_ms per utterance.
void write_latency_points(std::ostream& os, std::span<const UtteranceLatency> utterances);
/// id, frame, token, logprob for every bottom-tap spike.
void write_spike_dump(std::ostream& os, std::span<const DecodeRecord> records);

}  // namespace streamasr
