#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>

#include "streamasr/model/config.hpp"
#include "streamasr/model/parameters.hpp"

namespace streamasr {

/// Linear warmup then inverse square-root decay:
/// peak · min(step / warmup, sqrt(warmup / step)). Requires step ≥ 1.
double lr_at(long step, double peak_lr, long warmup_steps);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  long step = 0;
  Gradients<T> m, v;
};

/// Bias-corrected Adam update of every parameter that has a gradient entry;
/// parameters without one are untouched.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& config = {});

/// Global L2 norm of all gradient buffers.
template <typename T>
double global_norm(const Gradients<T>& grads);
/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
template <typename T>
double clip_global_norm(Gradients<T>& grads, double max_norm);

/// Chunk sizes drawn per batch.
struct ChunkDistribution {
  int min_chunk = 1;
  int max_chunk = 25;
  /// Top chunk = ratio · bottom chunk; 1 draws a single chunk for both blocks.
  int top_ratio = 1;
  /// Probability of drawing full context for the streaming pass instead.
  double full_context_prob = 0.0;

  void validate() const;
  static ChunkDistribution stage1() { return {1, 25, 1, 0.0}; }
  static ChunkDistribution stage2() { return {1, 8, 6, 0.0}; }
};

ChunkSpec sample_dynamic_chunk(std::mt19937_64& rng, const ChunkDistribution& dist);

/// Canonical parameter paths excluded from updates.
class FreezeSet {
 public:
  FreezeSet() = default;
  explicit FreezeSet(std::set<std::string, std::less<>> frozen) : frozen_(std::move(frozen)) {}

  bool frozen(std::string_view canonical_path) const { return frozen_.contains(canonical_path); }
  std::size_t size() const noexcept { return frozen_.size(); }
  const std::set<std::string, std::less<>>& paths() const noexcept { return frozen_; }

 private:
  std::set<std::string, std::less<>> frozen_;
};

/// Everything except the added layers and the (canonical) bottom CTC head.
template <typename T>
FreezeSet make_stage2_freeze_set(const ParameterSet<T>& params);

/// Element-wise arithmetic mean of parameter sets with identical layouts.
/// Each element is averaged over its values in sorted order, so the result
/// does not depend on input order.
template <typename T>
ParameterSet<T> average_parameters(std::span<const ParameterSet<T>* const> sets);

}  // namespace streamasr
