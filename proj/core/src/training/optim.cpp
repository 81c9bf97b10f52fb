#include "streamasr/training/optim.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "streamasr/errors.hpp"
#include "streamasr/model/model.hpp"

namespace streamasr {

double lr_at(long step, double peak_lr, long warmup_steps) {
  if (step < 1) throw ContractError("lr_at: step must be at least 1");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup_steps);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& config) {
  for (const auto& [path, g] : grads) {
    if (params.get(path).shape() != g.shape()) {
      throw DimensionError("adam: gradient " + shape_to_string(g.shape()) + " does not match parameter " + path + " " +
                           shape_to_string(params.get(path).shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (const auto& [path, g] : grads) {
    Tensor<T>& w = params.get(path);
    auto [mi, fresh_m] = state.m.try_emplace(path, g.shape());
    auto [vi, fresh_v] = state.v.try_emplace(path, g.shape());
    auto m = mi->second.data();
    auto v = vi->second.data();
    auto gd = g.data();
    auto wd = w.data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const double gi = gd[i];
      m[i] = static_cast<T>(config.beta1 * m[i] + (1.0 - config.beta1) * gi);
      v[i] = static_cast<T>(config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      wd[i] = static_cast<T>(wd[i] - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template <typename T>
double global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const auto& [path, g] : grads)
    for (T x : g.data()) sq += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sq);
}

template <typename T>
double clip_global_norm(Gradients<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [path, g] : grads)
      for (T& x : g.data()) x *= factor;
  }
  return norm;
}

void ChunkDistribution::validate() const {
  if (min_chunk < 1 || max_chunk < min_chunk) throw ConfigError("chunk distribution: need 1 <= min_chunk <= max_chunk");
  if (top_ratio < 1) throw ConfigError("chunk distribution: top_ratio must be at least 1");
  if (full_context_prob < 0.0 || full_context_prob > 1.0) throw ConfigError("chunk distribution: full_context_prob");
}

ChunkSpec sample_dynamic_chunk(std::mt19937_64& rng, const ChunkDistribution& dist) {
  dist.validate();
  if (dist.full_context_prob > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < dist.full_context_prob) {
    return ChunkSpec::full();
  }
  const int bottom = std::uniform_int_distribution<int>(dist.min_chunk, dist.max_chunk)(rng);
  return ChunkSpec{bottom, bottom * dist.top_ratio, false};
}

template <typename T>
FreezeSet make_stage2_freeze_set(const ParameterSet<T>& params) {
  std::set<std::string, std::less<>> trainable;
  for (const char* leaf : {"w", "b"}) {
    const std::string path = ctc_head_prefix(CtcTap::bottom_streaming) + leaf;
    if (params.contains(path)) trainable.insert(params.resolve(path));
  }
  std::set<std::string, std::less<>> frozen;
  for (const auto& path : params.paths()) {
    if (path.starts_with("enc.added") || trainable.contains(path)) continue;
    frozen.insert(path);
  }
  return FreezeSet(std::move(frozen));
}

template <typename T>
ParameterSet<T> average_parameters(std::span<const ParameterSet<T>* const> sets) {
  if (sets.empty()) throw ContractError("average: no parameter sets");
  for (const auto* s : sets) {
    if (!s->same_layout(*sets[0])) throw FormatError("average: parameter layouts differ");
  }
  ParameterSet<T> out;
  std::vector<T> column(sets.size());
  for (const auto& path : sets[0]->paths()) {
    Tensor<T> avg(sets[0]->get(path).shape());
    for (std::size_t i = 0; i < avg.size(); ++i) {
      for (std::size_t k = 0; k < sets.size(); ++k) column[k] = sets[k]->get(path)[i];
      std::sort(column.begin(), column.end());
      long double acc = 0.0L;
      for (T x : column) acc += x;
      avg[i] = static_cast<T>(acc / static_cast<long double>(sets.size()));
    }
    out.add(path, std::move(avg));
  }
  for (const auto& [alias, target] : sets[0]->aliases()) out.alias(alias, target);
  return out;
}

#define STREAMASR_INSTANTIATE_OPTIM(T)                                                                       \
  template void adam_step<T>(ParameterSet<T>&, const Gradients<T>&, AdamState<T>&, double, const AdamConfig&); \
  template double global_norm<T>(const Gradients<T>&);                                                      \
  template double clip_global_norm<T>(Gradients<T>&, double);                                               \
  template FreezeSet make_stage2_freeze_set<T>(const ParameterSet<T>&);                                     \
  template ParameterSet<T> average_parameters<T>(std::span<const ParameterSet<T>* const>);

STREAMASR_INSTANTIATE_OPTIM(float)
STREAMASR_INSTANTIATE_OPTIM(double)

}  // namespace streamasr
