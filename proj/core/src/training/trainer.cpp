#include "streamasr/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "streamasr/errors.hpp"

namespace streamasr {

void TrainConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
  if (average_top_k < 1) throw ConfigError("average_top_k must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0 || max_steps < 0) throw ConfigError("epochs and max_steps must be non-negative");
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  chunks.validate();
  dev_chunk.validate();
}

namespace {

struct StepLoss {
  Var<float> total;
  double bottom = 0.0, top = 0.0, full = 0.0, distill = 0.0;
};

bool needs_full_pass(Stage stage, const LossWeights& w) {
  return w.use_nonstreaming_loss || (stage == Stage::two && w.beta > 0.0);
}

StepLoss forward_loss(Stage stage, const Model<float>& model, BoundParameters<float>& p, const Utterance& u,
                      const ChunkSpec& chunk, const LossWeights& w, std::mt19937_64* dropout_rng = nullptr) {
  const EncoderOptions options{std::nullopt, dropout_rng};
  const EncoderOutputs<float> enc = needs_full_pass(stage, w)
                                        ? model.encode_joint(p, u.features, chunk, options)
                                        : model.encode(p, u.features, EncoderMode::streaming, chunk, options);
  StepLoss out;
  JointLossTerms<float> joint;
  if (stage == Stage::two) {
    Stage2LossTerms<float> s = stage2_loss(model, p, enc, u.tokens, w);
    out.total = s.total;
    joint = s.joint;
    if (s.distill.valid()) out.distill = s.distill.value().item();
  } else {
    joint = joint_loss(model, p, enc, u.tokens, w);
    out.total = joint.total;
  }
  out.bottom = joint.streaming_bottom.total.value().item();
  out.top = joint.streaming_top.total.value().item();
  if (joint.full_top.total.valid()) out.full = joint.full_top.total.value().item();
  return out;
}

void log_header(std::ostream& os) {
  os << "step\tlr\tloss\tstreaming_bottom\tstreaming_top\tfull_top\tdistill\tgrad_norm\tchunk\n";
}

void log_row(std::ostream& os, const TrainLogRow& r) {
  os << r.step << '\t' << r.lr << '\t' << r.loss << '\t' << r.streaming_bottom << '\t' << r.streaming_top << '\t'
     << r.full_top << '\t' << r.distill << '\t' << r.grad_norm << '\t' << r.chunk.to_string() << '\n';
}

void keep_best(std::vector<CheckpointRecord>& best, CheckpointRecord record, int k) {
  best.push_back(std::move(record));
  std::stable_sort(best.begin(), best.end(), [](const CheckpointRecord& a, const CheckpointRecord& b) {
    return a.dev.total < b.dev.total;
  });
  if (best.size() > static_cast<std::size_t>(k)) best.resize(static_cast<std::size_t>(k));
}

TrainResult run_training(Stage stage, const Model<float>& model, ParameterSet<float> params,
                         std::span<const Utterance> train, std::span<const Utterance> dev, const TrainConfig& config,
                         const LossWeights& weights, const FreezeSet& freeze, const TrainHooks& hooks) {
  config.validate();
  weights.validate();
  if (train.empty()) throw ContractError("training: empty training set");
  std::span<const Utterance> dev_used = dev;
  if (config.dev_limit > 0 && dev.size() > static_cast<std::size_t>(config.dev_limit)) {
    dev_used = dev.first(static_cast<std::size_t>(config.dev_limit));
  }

  TrainResult result;
  auto dev_loss = [&](const ParameterSet<float>& ps) {
    return dev_used.empty() ? DevLoss{} : evaluate_dev_loss(stage, model, ps, dev_used, config.dev_chunk, weights);
  };
  result.initial_dev = dev_loss(params);

  std::mt19937_64 order_rng(mix_seed(config.seed, 0x0d3e));
  std::mt19937_64 chunk_rng(mix_seed(config.seed, 0xc4c4));
  std::mt19937_64 dropout_rng(mix_seed(config.seed, 0xd209));
  AdamState<float> adam;
  const auto trainable = [&freeze](const std::string& path) { return !freeze.frozen(path); };
  if (hooks.log != nullptr) log_header(*hooks.log);

  std::vector<std::size_t> order(train.size());
  long step = 0;
  bool done = false;
  auto record = [&](int epoch) {
    CheckpointRecord rec{stage, step, epoch, dev_loss(params), params};
    if (hooks.on_checkpoint) hooks.on_checkpoint(rec);
    keep_best(result.best, std::move(rec), config.average_top_k);
  };

  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size() && !done; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const ChunkSpec chunk = sample_dynamic_chunk(chunk_rng, config.chunks);
      ++step;
      Gradients<float> grads;
      TrainLogRow row;
      row.step = step;
      row.chunk = chunk;
      const float inv = 1.0f / static_cast<float>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Utterance& u = train[order[i]];
        Tape<float> tape;
        BoundParameters<float> p(params, tape, trainable);
        StepLoss loss;
        try {
          loss = forward_loss(stage, model, p, u, chunk, weights, &dropout_rng);
          tape.backward(ops::scale(loss.total, inv));
        } catch (const NumericError& e) {
          throw NumericError("training diverged at step " + std::to_string(step) + " on utterance " + u.id + ": " +
                             e.what());
        }
        p.accumulate_gradients(grads);
        row.loss += loss.total.value().item() * inv;
        row.streaming_bottom += loss.bottom * inv;
        row.streaming_top += loss.top * inv;
        row.full_top += loss.full * inv;
        row.distill += loss.distill * inv;
      }
      row.grad_norm = clip_global_norm(grads, config.grad_clip);
      if (!std::isfinite(row.grad_norm)) {
        throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite gradient norm");
      }
      row.lr = lr_at(step, config.peak_lr, config.warmup_steps);
      adam_step(params, grads, adam, row.lr, config.adam);
      if (hooks.log != nullptr) log_row(*hooks.log, row);
      if (hooks.on_step) hooks.on_step(row);
      if (step % config.eval_every == 0) record(epoch);
      if (config.max_steps > 0 && step >= config.max_steps) done = true;
    }
  }
  if (step == 0 || step % config.eval_every != 0) record(std::max(0, config.epochs - 1));
  result.final_dev = dev_loss(params);
  result.params = std::move(params);
  result.steps = step;
  return result;
}

}  // namespace

DevLoss evaluate_dev_loss(Stage stage, const Model<float>& model, const ParameterSet<float>& params,
                          std::span<const Utterance> dev, const ChunkSpec& chunk, const LossWeights& weights) {
  if (dev.empty()) throw ContractError("dev loss: empty dev set");
  DevLoss sum;
  for (const auto& u : dev) {
    Tape<float> tape;
    BoundParameters<float> p(params, tape);
    const StepLoss l = forward_loss(stage, model, p, u, chunk, weights);
    sum.total += l.total.value().item();
    sum.distill += l.distill;
  }
  const double n = static_cast<double>(dev.size());
  return {sum.total / n, sum.distill / n};
}

TrainResult train_stage1(const Model<float>& model, ParameterSet<float> params, std::span<const Utterance> train,
                         std::span<const Utterance> dev, const TrainConfig& config, const LossWeights& weights,
                         const TrainHooks& hooks) {
  if (model.config().with_added_layers) throw ConfigError("stage 1 trains the model without the added layers");
  return run_training(Stage::one, model, std::move(params), train, dev, config, weights, FreezeSet{}, hooks);
}

TrainResult train_stage2(const Model<float>& model, ParameterSet<float> params, std::span<const Utterance> train,
                         std::span<const Utterance> dev, const TrainConfig& config, const LossWeights& weights,
                         const TrainHooks& hooks) {
  if (!model.config().with_added_layers) throw ConfigError("stage 2 needs the added layers (see prepare_stage2)");
  const FreezeSet freeze = make_stage2_freeze_set(params);
  return run_training(Stage::two, model, std::move(params), train, dev, config, weights, freeze, hooks);
}

Stage2Start prepare_stage2(const ModelConfig& stage1_config, const ParameterSet<float>& stage1_params,
                           std::uint64_t seed) {
  if (stage1_config.with_added_layers) throw ConfigError("prepare_stage2: model already has the added layers");
  Stage2Start out{stage1_config, stage1_params};
  out.config.with_added_layers = true;
  out.config.validate();
  insert_added_layers(out.params, out.config, seed);
  return out;
}

ParameterSet<float> average_best(std::span<const CheckpointRecord> records, int k) {
  if (k < 1) throw ConfigError("average: k must be at least 1");
  if (records.empty()) throw ContractError("average: no checkpoint records");
  std::vector<const CheckpointRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const CheckpointRecord* a, const CheckpointRecord* b) { return a->dev.total < b->dev.total; });
  sorted.resize(std::min(sorted.size(), static_cast<std::size_t>(k)));
  std::vector<const ParameterSet<float>*> sets;
  for (const auto* r : sorted) sets.push_back(&r->params);
  return average_parameters<float>(sets);
}

}  // namespace streamasr
