#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "streamasr/losses/losses.hpp"
#include "streamasr/synthdata/corpus.hpp"
#include "streamasr/training/optim.hpp"

namespace streamasr {

enum class Stage { one = 1, two = 2 };

struct TrainConfig {
  double peak_lr = 2e-3;
  long warmup_steps = 500;
  AdamConfig adam;
  int batch_size = 8;
  int epochs = 4;
  long max_steps = 0;  ///< 0 runs all epochs
  std::uint64_t seed = 1;
  ChunkDistribution chunks = ChunkDistribution::stage1();
  double grad_clip = 5.0;  ///< global norm; 0 disables
  int average_top_k = 5;
  long eval_every = 100;  ///< steps between dev evaluations / checkpoint records
  ChunkSpec dev_chunk{4, 24};
  int dev_limit = 0;  ///< dev utterances used for dev loss; 0 = all

  void validate() const;
};

struct DevLoss {
  double total = 0.0;
  double distill = 0.0;
};

struct CheckpointRecord {
  Stage stage = Stage::one;
  long step = 0;
  int epoch = 0;
  DevLoss dev;
  ParameterSet<float> params;
};

struct TrainLogRow {
  long step = 0;
  double lr = 0.0, loss = 0.0;
  double streaming_bottom = 0.0, streaming_top = 0.0, full_top = 0.0, distill = 0.0;
  double grad_norm = 0.0;
  ChunkSpec chunk;
};

struct TrainHooks {
  /// Receives tab-separated log lines (header first).
  std::ostream* log = nullptr;
  std::function<void(const CheckpointRecord&)> on_checkpoint;
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainResult {
  ParameterSet<float> params;  ///< parameters after the last step
  DevLoss initial_dev, final_dev;
  /// Best records by dev loss, best first, at most average_top_k of them.
  std::vector<CheckpointRecord> best;
  long steps = 0;
};

/// Mean dev loss of the stage objective at a fixed chunk configuration.
DevLoss evaluate_dev_loss(Stage stage, const Model<float>& model, const ParameterSet<float>& params,
                          std::span<const Utterance> dev, const ChunkSpec& chunk, const LossWeights& weights);

/// Joint training of a model without the added layers.
TrainResult train_stage1(const Model<float>& model, ParameterSet<float> params, std::span<const Utterance> train,
                         std::span<const Utterance> dev, const TrainConfig& config, const LossWeights& weights,
                         const TrainHooks& hooks = {});

/// Distillation stage: only the added layers and the bottom CTC head move.
TrainResult train_stage2(const Model<float>& model, ParameterSet<float> params, std::span<const Utterance> train,
                         std::span<const Utterance> dev, const TrainConfig& config, const LossWeights& weights,
                         const TrainHooks& hooks = {});

struct Stage2Start {
  ModelConfig config;
  ParameterSet<float> params;
};

/// Inserts randomly initialized added layers into a stage-1 model; the bottom
/// tap moves up to the top of the new layers.
Stage2Start prepare_stage2(const ModelConfig& stage1_config, const ParameterSet<float>& stage1_params,
                           std::uint64_t seed);

/// Arithmetic mean of the k best records (by dev loss).
ParameterSet<float> average_best(std::span<const CheckpointRecord> records, int k);

}  // namespace streamasr
