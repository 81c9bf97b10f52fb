#include "streamasr/io/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "streamasr/errors.hpp"

#ifndef STREAMASR_VERSION
#define STREAMASR_VERSION "unknown"
#endif

namespace streamasr {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("'" + std::string(key) + "': cannot parse '" + std::string(text) + "' as a number");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("'" + std::string(key) + "': expected a boolean, got '" + std::string(text) + "'");
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  for (int prec = 1; prec < 17; ++prec) {
    const int n = std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(buf, buf + n, back);
    if (back == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> parse_list(std::string_view key, std::string_view text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    out.push_back(parse_number<double>(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

using FieldTable = std::vector<std::pair<std::string, Field>>;

template <typename N>
Field number(N RunConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { c.*member = parse_number<N>(k, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename S, typename N>
Field nested(S RunConfig::*outer, N S::*inner) {
  return {[outer, inner](RunConfig& c, std::string_view k, std::string_view v) {
            if constexpr (std::is_same_v<N, bool>) (c.*outer).*inner = parse_bool(k, v);
            else (c.*outer).*inner = parse_number<N>(k, v);
          },
          [outer, inner](const RunConfig& c) {
            const N value = (c.*outer).*inner;
            if constexpr (std::is_same_v<N, bool>) return std::string(value ? "true" : "false");
            else if constexpr (std::is_floating_point_v<N>) return fmt_double(value);
            else return std::to_string(value);
          }};
}

/// The same field in both stage configs.
template <typename N>
Field both_stages(N TrainConfig::*inner) {
  return {[inner](RunConfig& c, std::string_view k, std::string_view v) {
            c.stage1.*inner = c.stage2.*inner = parse_number<N>(k, v);
          },
          [inner](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt_double(c.stage1.*inner);
            else return std::to_string(c.stage1.*inner);
          }};
}

template <typename N>
Field stage_field(TrainConfig RunConfig::*stage, N TrainConfig::*inner) {
  return nested(stage, inner);
}

template <typename N>
Field chunk_field(TrainConfig RunConfig::*stage, N ChunkDistribution::*inner) {
  return {[stage, inner](RunConfig& c, std::string_view k, std::string_view v) {
            (c.*stage).chunks.*inner = parse_number<N>(k, v);
          },
          [stage, inner](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return fmt_double((c.*stage).chunks.*inner);
            else return std::to_string((c.*stage).chunks.*inner);
          }};
}

const std::map<std::string, FieldTable>& table() {
  static const std::map<std::string, FieldTable> t = [] {
    std::map<std::string, FieldTable> s;
    auto m = [](int ModelConfig::*f) { return nested(&RunConfig::model, f); };
    s["model"] = {
        {"n1", m(&ModelConfig::n1)},
        {"n2", m(&ModelConfig::n2)},
        {"m", m(&ModelConfig::m)},
        {"d_model", m(&ModelConfig::d_model)},
        {"n_heads", m(&ModelConfig::n_heads)},
        {"d_ff", m(&ModelConfig::d_ff)},
        {"causal_kernel", m(&ModelConfig::causal_kernel)},
        {"centered_kernel", m(&ModelConfig::centered_kernel)},
        {"vocab_size", m(&ModelConfig::vocab_size)},
        {"feat_dim", m(&ModelConfig::feat_dim)},
        {"decoder_layers", m(&ModelConfig::decoder_layers)},
        {"ctc_sharing",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.model.ctc_sharing = parse_ctc_sharing(v); },
          [](const RunConfig& c) { return std::string(to_string(c.model.ctc_sharing)); }}},
        {"dropout", nested(&RunConfig::model, &ModelConfig::dropout)},
        {"init_seed", number(&RunConfig::init_seed)},
    };
    s["train"] = {
        {"peak_lr", stage_field(&RunConfig::stage1, &TrainConfig::peak_lr)},
        {"stage2_peak_lr", stage_field(&RunConfig::stage2, &TrainConfig::peak_lr)},
        {"warmup_steps", both_stages(&TrainConfig::warmup_steps)},
        {"adam_beta1",
         {[](RunConfig& c, std::string_view k, std::string_view v) {
            c.stage1.adam.beta1 = c.stage2.adam.beta1 = parse_number<double>(k, v);
          },
          [](const RunConfig& c) { return fmt_double(c.stage1.adam.beta1); }}},
        {"adam_beta2",
         {[](RunConfig& c, std::string_view k, std::string_view v) {
            c.stage1.adam.beta2 = c.stage2.adam.beta2 = parse_number<double>(k, v);
          },
          [](const RunConfig& c) { return fmt_double(c.stage1.adam.beta2); }}},
        {"adam_eps",
         {[](RunConfig& c, std::string_view k, std::string_view v) {
            c.stage1.adam.eps = c.stage2.adam.eps = parse_number<double>(k, v);
          },
          [](const RunConfig& c) { return fmt_double(c.stage1.adam.eps); }}},
        {"batch_size", both_stages(&TrainConfig::batch_size)},
        {"stage1_epochs", stage_field(&RunConfig::stage1, &TrainConfig::epochs)},
        {"stage2_epochs", stage_field(&RunConfig::stage2, &TrainConfig::epochs)},
        {"stage1_max_steps", stage_field(&RunConfig::stage1, &TrainConfig::max_steps)},
        {"stage2_max_steps", stage_field(&RunConfig::stage2, &TrainConfig::max_steps)},
        {"seed",
         {[](RunConfig& c, std::string_view k, std::string_view v) {
            c.stage1.seed = parse_number<std::uint64_t>(k, v);
            c.stage2.seed = mix_seed(c.stage1.seed, 2);
          },
          [](const RunConfig& c) { return std::to_string(c.stage1.seed); }}},
        {"stage1_chunk_min", chunk_field(&RunConfig::stage1, &ChunkDistribution::min_chunk)},
        {"stage1_chunk_max", chunk_field(&RunConfig::stage1, &ChunkDistribution::max_chunk)},
        {"stage1_full_context_prob", chunk_field(&RunConfig::stage1, &ChunkDistribution::full_context_prob)},
        {"stage2_chunk_min", chunk_field(&RunConfig::stage2, &ChunkDistribution::min_chunk)},
        {"stage2_chunk_max", chunk_field(&RunConfig::stage2, &ChunkDistribution::max_chunk)},
        {"stage2_top_ratio", chunk_field(&RunConfig::stage2, &ChunkDistribution::top_ratio)},
        {"stage2_full_context_prob", chunk_field(&RunConfig::stage2, &ChunkDistribution::full_context_prob)},
        {"grad_clip", both_stages(&TrainConfig::grad_clip)},
        {"average_top_k", both_stages(&TrainConfig::average_top_k)},
        {"eval_every", both_stages(&TrainConfig::eval_every)},
        {"dev_chunk",
         {[](RunConfig& c, std::string_view, std::string_view v) {
            c.stage1.dev_chunk = c.stage2.dev_chunk = ChunkSpec::parse(v);
          },
          [](const RunConfig& c) { return c.stage1.dev_chunk.to_string(); }}},
        {"dev_limit", both_stages(&TrainConfig::dev_limit)},
    };
    auto l = [](auto LossWeights::*f) { return nested(&RunConfig::loss, f); };
    s["loss"] = {
        {"lambda", l(&LossWeights::lambda)},
        {"alpha", l(&LossWeights::alpha)},
        {"beta", l(&LossWeights::beta)},
        {"label_smoothing", l(&LossWeights::label_smoothing)},
        {"distill_variant",
         {[](RunConfig& c, std::string_view, std::string_view v) {
            c.loss.distill_variant = parse_distill_variant(v);
          },
          [](const RunConfig& c) { return std::string(to_string(c.loss.distill_variant)); }}},
        {"use_nonstreaming_loss", l(&LossWeights::use_nonstreaming_loss)},
    };
    s["decode"] = {
        {"chunk",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.decode.chunk = ChunkSpec::parse(v); },
          [](const RunConfig& c) { return c.decode.chunk.to_string(); }}},
        {"beam", nested(&RunConfig::decode, &DecodeOptions::beam)},
        {"nbest", nested(&RunConfig::decode, &DecodeOptions::nbest)},
        {"rescore_on_full", nested(&RunConfig::decode, &DecodeOptions::rescore_on_full)},
    };
    s["eval"] = {{"max_cer", number(&RunConfig::max_cer)}};
    auto d = [](auto SynthParams::*f) { return nested(&RunConfig::data, f); };
    s["data"] = {
        {"seed", number(&RunConfig::data_seed)},
        {"n_train", number(&RunConfig::n_train)},
        {"n_dev", number(&RunConfig::n_dev)},
        {"n_test", number(&RunConfig::n_test)},
        {"min_tokens", d(&SynthParams::min_tokens)},
        {"max_tokens", d(&SynthParams::max_tokens)},
        {"min_token_frames", d(&SynthParams::min_token_frames)},
        {"max_token_frames", d(&SynthParams::max_token_frames)},
        {"min_gap_frames", d(&SynthParams::min_gap_frames)},
        {"max_gap_frames", d(&SynthParams::max_gap_frames)},
        {"min_edge_frames", d(&SynthParams::min_edge_frames)},
        {"max_edge_frames", d(&SynthParams::max_edge_frames)},
        {"snr_db", d(&SynthParams::snr_db)},
        {"onset_fraction", d(&SynthParams::onset_fraction)},
        {"onset_level", d(&SynthParams::onset_level)},
        {"bigram_strength", d(&SynthParams::bigram_strength)},
        {"unigram",
         {[](RunConfig& c, std::string_view k, std::string_view v) { c.data.unigram = parse_list(k, v); },
          [](const RunConfig& c) { return fmt_list(c.data.unigram); }}},
    };
    s["paths"] = {
        {"data_dir",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.data_dir = std::string(v); },
          [](const RunConfig& c) { return c.data_dir; }}},
        {"work_dir",
         {[](RunConfig& c, std::string_view, std::string_view v) { c.work_dir = std::string(v); },
          [](const RunConfig& c) { return c.work_dir; }}},
    };
    return s;
  }();
  return t;
}

const char* const kSectionOrder[] = {"model", "train", "loss", "decode", "eval", "data", "paths"};

}  // namespace

RunConfig::RunConfig() {
  stage2.chunks = ChunkDistribution::stage2();
  stage2.seed = mix_seed(stage1.seed, 2);
}

void RunConfig::set(std::string_view section, std::string_view key, std::string_view value) {
  const auto& t = table();
  const auto sec = t.find(std::string(section));
  if (sec == t.end()) throw ConfigError("unknown config section [" + std::string(section) + "]");
  for (const auto& [name, field] : sec->second) {
    if (name == key) {
      field.set(*this, std::string(section) + "." + std::string(key), trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "' in [" + std::string(section) + "]");
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
}

void RunConfig::validate() const {
  model.validate();
  stage1.validate();
  stage2.validate();
  loss.validate();
  decode.chunk.validate();
  if (decode.beam < 1 || decode.nbest < 1) throw ConfigError("decode.beam and decode.nbest must be at least 1");
  if (max_cer < 0.0) throw ConfigError("eval.max_cer must be non-negative");
  if (n_train < 0 || n_dev < 0 || n_test < 0) throw ConfigError("data split sizes must be non-negative");
  synth_params().validate();
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const char* section : kSectionOrder) {
    os << '[' << section << "]\n";
    for (const auto& [name, field] : table().at(section)) os << name << " = " << field.get(*this) << '\n';
    os << '\n';
  }
  return os.str();
}

std::string RunConfig::model_text() const {
  std::ostringstream os;
  os << "[model]\n";
  for (const auto& [name, field] : table().at("model")) os << name << " = " << field.get(*this) << '\n';
  return os.str();
}

std::string RunConfig::hash() const { return fnv1a_hex(to_text()); }

SynthParams RunConfig::synth_params() const {
  SynthParams p = data;
  p.vocab_size = model.vocab_size;
  p.feat_dim = model.feat_dim;
  p.frame_shift_ms = model.frame_shift_ms;
  return p;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("malformed section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (!table().contains(section)) throw ConfigError("unknown config section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      if (section.empty()) throw ConfigError("key outside of any section");
      c.set(section, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("no such config file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const char* section : kSectionOrder)
    for (const auto& [name, field] : table().at(section)) out.push_back(std::string(section) + "." + name);
  return out;
}

ModelConfig parse_model_section(std::string_view text) {
  RunConfig c;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (line.empty() || line.front() == '[' || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("malformed model section line '" + std::string(line) + "'");
    c.set("model", trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  c.model.validate();
  return c.model;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string_view code_version() { return STREAMASR_VERSION; }

}  // namespace streamasr
