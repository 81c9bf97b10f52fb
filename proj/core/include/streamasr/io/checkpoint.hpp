#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "streamasr/model/parameters.hpp"

namespace streamasr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int stage = 0;
  long step = 0;
  int epoch = 0;
  double dev_loss = 0.0;
  double dev_distill = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string model_config;  ///< serialized [model] section
};

struct Checkpoint {
  ParameterSet<float> params;
  CheckpointMeta meta;
};

/// Single-file checkpoint: magic, version, JSON manifest (paths, shapes, dtype,
/// offsets, alias table, metadata, crc32), then the raw little-endian blob.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const ParameterSet<float>& params, const CheckpointMeta& meta, const std::filesystem::path& path);

/// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads the checkpoints, keeps the k with the lowest dev loss and averages
/// them element-wise. Throws FormatError when manifests differ.
Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths, int k);

/// Writes `bytes` to `path` via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace streamasr
