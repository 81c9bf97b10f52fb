#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "streamasr/decoding/decoding.hpp"
#include "streamasr/losses/losses.hpp"
#include "streamasr/synthdata/corpus.hpp"
#include "streamasr/training/trainer.hpp"

namespace streamasr {

/// Every tunable of the pipeline. Text form: `[section]` headers followed by
/// `key = value` lines; `#` starts a comment. Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  std::uint64_t init_seed = 1;

  TrainConfig stage1;
  TrainConfig stage2;
  LossWeights loss;

  DecodeOptions decode;
  double max_cer = 0.5;  ///< latency exclusion threshold

  SynthParams data;
  std::uint64_t data_seed = 1;
  int n_train = 2000, n_dev = 200, n_test = 200;

  std::string data_dir = "data";
  std::string work_dir = "work";

  RunConfig();

  /// Applies one `section.key=value` assignment.
  void set(std::string_view assignment);
  void set(std::string_view section, std::string_view key, std::string_view value);
  void validate() const;

  /// Canonical text with every key, in a fixed order.
  std::string to_text() const;
  /// Stable hex digest of to_text().
  std::string hash() const;
  /// The [model] section only, as stored in checkpoints.
  std::string model_text() const;

  /// Synthetic-corpus parameters with vocabulary and feature size taken from the model.
  SynthParams synth_params() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  /// Documented list of `section.key` names.
  static std::vector<std::string> keys();
};

/// ModelConfig from a serialized [model] section.
ModelConfig parse_model_section(std::string_view text);

/// 64-bit FNV-1a digest as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

/// Version string compiled into the library.
std::string_view code_version();

}  // namespace streamasr
