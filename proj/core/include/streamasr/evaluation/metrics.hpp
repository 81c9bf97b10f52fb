#pragma once

#include <span>
#include <string>
#include <vector>

#include "streamasr/decoding/decoding.hpp"
#include "streamasr/synthdata/corpus.hpp"

namespace streamasr {

/// Unit-cost Levenshtein distance.
std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp);

/// edit_distance / |ref|. Empty ref is a contract error.
double cer(std::span<const int> ref, std::span<const int> hyp);

/// For each reference position, the hypothesis position it is matched to by a
/// minimum-cost alignment (exact matches only), or -1.
std::vector<long> align_matches(std::span<const int> ref, std::span<const int> hyp);

/// Nearest-rank percentile: the element at rank ceil(p/100 · n) of the sorted values.
double percentile(std::vector<double> values, double p);

/// Average structural wait of a chunk: chunk · frame_ms / 2.
double model_latency_ms(int chunk, double frame_ms = 40.0);

struct EmissionRecord {
  int token = 0;
  double emitted_ms = 0.0;
  double truth_ms = 0.0;
};

struct UtteranceLatency {
  std::string id;
  bool included = false;
  std::string excluded_reason;  ///< empty when included
  double cer = 0.0;             ///< of the last partial
  double ftd_ms = 0.0;
  double ltd_ms = 0.0;
  std::vector<EmissionRecord> records;  ///< one per matched reference token
};

/// First/last token emission delays of one utterance, taking emission times
/// from the last partial and truth times from the token onsets. Utterances
/// whose first or last reference token is unmatched, or whose partial CER
/// exceeds `max_cer`, are excluded.
UtteranceLatency emission_delays(std::string id, std::span<const int> ref, std::span<const TokenSpan> spans,
                                 const PartialResult& last_partial, double max_cer = 0.5);

struct LatencyReport {
  double ftd_p50 = 0.0, ftd_p90 = 0.0;
  double ltd_p50 = 0.0, ltd_p90 = 0.0;
  std::size_t included = 0, excluded = 0;
};

LatencyReport summarize_latency(std::span<const UtteranceLatency> utterances);

/// Corpus-level error rates: total edits over total reference tokens.
struct QualityReport {
  double cer_rescore = 0.0;
  double cer_top_greedy = 0.0;
  double cer_bottom_greedy = 0.0;
  double cer_top_beam = 0.0;  ///< first-pass best before rescoring
  std::size_t utterances = 0;
  std::size_t ref_tokens = 0;
};

struct ScoredUtterance {
  std::vector<int> ref;
  std::vector<int> rescore, top_beam, top_greedy, bottom_greedy;
};

QualityReport summarize_quality(std::span<const ScoredUtterance> utterances);

}  // namespace streamasr
