#include "streamasr/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "streamasr/errors.hpp"

namespace streamasr {

namespace {

std::vector<std::vector<std::size_t>> edit_table(std::span<const int> ref, std::span<const int> hyp) {
  std::vector<std::vector<std::size_t>> d(ref.size() + 1, std::vector<std::size_t>(hyp.size() + 1));
  for (std::size_t i = 0; i <= ref.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= hyp.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  return d;
}

}  // namespace

std::size_t edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  return edit_table(ref, hyp)[ref.size()][hyp.size()];
}

double cer(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw ContractError("cer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

std::vector<long> align_matches(std::span<const int> ref, std::span<const int> hyp) {
  const auto d = edit_table(ref, hyp);
  std::vector<long> out(ref.size(), -1);
  std::size_t i = ref.size(), j = hyp.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && d[i][j] == d[i - 1][j - 1]) {
      out[i - 1] = static_cast<long>(j - 1);
      --i;
      --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      --i;
    } else {
      --j;
    }
  }
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile: no values");
  if (p < 0.0 || p > 100.0) throw ContractError("percentile: p must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

double model_latency_ms(int chunk, double frame_ms) {
  if (chunk < 1) throw ContractError("model latency: chunk must be at least 1");
  return static_cast<double>(chunk) * frame_ms / 2.0;
}

UtteranceLatency emission_delays(std::string id, std::span<const int> ref, std::span<const TokenSpan> spans,
                                 const PartialResult& last_partial, double max_cer) {
  if (ref.empty()) throw ContractError("emission delays: empty reference for " + id);
  if (spans.size() != ref.size()) throw ContractError("emission delays: span count differs from reference for " + id);
  UtteranceLatency out;
  out.id = std::move(id);
  out.cer = cer(ref, last_partial.tokens);
  const std::vector<long> match = align_matches(ref, last_partial.tokens);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (match[i] < 0) continue;
    out.records.push_back({ref[i], last_partial.first_seen_ms[static_cast<std::size_t>(match[i])], spans[i].start_ms});
  }
  if (match.front() < 0 || match.back() < 0) {
    out.excluded_reason = match.front() < 0 ? "first token missing" : "last token missing";
    return out;
  }
  if (out.cer > max_cer) {
    out.excluded_reason = "cer above threshold";
    return out;
  }
  out.included = true;
  out.ftd_ms = out.records.front().emitted_ms - out.records.front().truth_ms;
  out.ltd_ms = out.records.back().emitted_ms - out.records.back().truth_ms;
  return out;
}

LatencyReport summarize_latency(std::span<const UtteranceLatency> utterances) {
  LatencyReport r;
  std::vector<double> ftd, ltd;
  for (const auto& u : utterances) {
    if (!u.included) {
      ++r.excluded;
      continue;
    }
    ++r.included;
    ftd.push_back(u.ftd_ms);
    ltd.push_back(u.ltd_ms);
  }
  if (ftd.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.ftd_p50 = r.ftd_p90 = r.ltd_p50 = r.ltd_p90 = nan;
    return r;
  }
  r.ftd_p50 = percentile(ftd, 50);
  r.ftd_p90 = percentile(ftd, 90);
  r.ltd_p50 = percentile(ltd, 50);
  r.ltd_p90 = percentile(ltd, 90);
  return r;
}

QualityReport summarize_quality(std::span<const ScoredUtterance> utterances) {
  QualityReport q;
  std::size_t e_rescore = 0, e_beam = 0, e_top = 0, e_bottom = 0;
  for (const auto& u : utterances) {
    if (u.ref.empty()) throw ContractError("quality: empty reference");
    q.ref_tokens += u.ref.size();
    e_rescore += edit_distance(u.ref, u.rescore);
    e_beam += edit_distance(u.ref, u.top_beam);
    e_top += edit_distance(u.ref, u.top_greedy);
    e_bottom += edit_distance(u.ref, u.bottom_greedy);
  }
  q.utterances = utterances.size();
  if (q.ref_tokens > 0) {
    const auto n = static_cast<double>(q.ref_tokens);
    q.cer_rescore = static_cast<double>(e_rescore) / n;
    q.cer_top_beam = static_cast<double>(e_beam) / n;
    q.cer_top_greedy = static_cast<double>(e_top) / n;
    q.cer_bottom_greedy = static_cast<double>(e_bottom) / n;
  }
  return q;
}

}  // namespace streamasr
