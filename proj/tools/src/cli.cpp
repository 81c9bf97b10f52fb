#include "streamasr/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "streamasr/errors.hpp"
#include "streamasr/evaluation/metrics.hpp"
#include "streamasr/io/checkpoint.hpp"
#include "streamasr/io/files.hpp"
#include "streamasr/io/run_config.hpp"
#include "streamasr/training/trainer.hpp"

namespace streamasr {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig load_config(const Common& c) {
  std::string path = c.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("STREAMASR_CONFIG")) path = env;
  }
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::load(path);
  for (const auto& s : c.overrides) cfg.set(s);
  cfg.validate();
  return cfg;
}

Stamp make_stamp(const std::string& command, const RunConfig& cfg, std::uint64_t seed) {
  return {command, cfg.hash(), seed, std::string(code_version())};
}

fs::path stage_dir(const RunConfig& cfg, int stage) { return fs::path(cfg.work_dir) / ("stage" + std::to_string(stage)); }

std::string step_name(long step) {
  std::ostringstream os;
  os << "step_" << std::setw(7) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

std::vector<fs::path> step_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && e.path().extension() == ".ckpt") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Model config a checkpoint was trained with.
ModelConfig checkpoint_model(const Checkpoint& ck) {
  ModelConfig mc = parse_model_section(ck.meta.model_config);
  mc.with_added_layers = ck.meta.stage == 2;
  return mc;
}

void check_layout(const ModelConfig& mc, const ParameterSet<float>& params, const std::string& what) {
  if (!init_parameters<float>(mc, 0).same_layout(params)) {
    throw ManifestError(what + ": parameter layout does not match its model configuration");
  }
}

void check_data_matches(const ModelConfig& mc, const Corpus& corpus) {
  if (mc.feat_dim != corpus.params.feat_dim || mc.vocab_size != corpus.params.vocab_size) {
    throw ManifestError("model expects feat_dim " + std::to_string(mc.feat_dim) + " / vocab " +
                        std::to_string(mc.vocab_size) + " but the corpus has " +
                        std::to_string(corpus.params.feat_dim) + " / " + std::to_string(corpus.params.vocab_size));
  }
}

void save_training(const TrainResult& result, Stage stage, const RunConfig& cfg, const TrainConfig& tc,
                   std::ostream& out) {
  const int s = static_cast<int>(stage);
  const fs::path dir = stage_dir(cfg, s);
  for (const auto& r : result.best) {
    CheckpointMeta meta{s, r.step, r.epoch, r.dev.total, r.dev.distill, cfg.hash(), tc.seed,
                        std::string(code_version()), cfg.model_text()};
    save_checkpoint(r.params, meta, dir / step_name(r.step));
  }
  CheckpointMeta last{s, result.steps, tc.epochs, result.final_dev.total, result.final_dev.distill, cfg.hash(),
                      tc.seed, std::string(code_version()), cfg.model_text()};
  save_checkpoint(result.params, last, dir / "last.ckpt");
  out << "stage " << s << ": " << result.steps << " steps, dev loss " << result.initial_dev.total << " -> "
      << result.final_dev.total << ", kept " << result.best.size() << " checkpoints in " << dir.string() << '\n';
}

void clear_stage(const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& p : step_checkpoints(dir)) fs::remove(p);
}

int cmd_gen_data(const Common& c, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = load_config(c);
  const fs::path dir = out_dir.empty() ? fs::path(cfg.data_dir) : fs::path(out_dir);
  const Corpus corpus = generate_corpus(cfg.data_seed, cfg.n_train, cfg.n_dev, cfg.n_test, cfg.synth_params());
  write_corpus(corpus, dir, make_stamp("gen-data", cfg, cfg.data_seed));
  out << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
      << " utterances to " << dir.string() << " (manifest " << manifest_digest(corpus) << ")\n";
  return kExitOk;
}

int cmd_train_stage1(const Common& c, std::ostream& out) {
  const RunConfig cfg = load_config(c);
  ModelConfig mc = cfg.model;
  mc.with_added_layers = false;
  const Corpus corpus = read_corpus(cfg.data_dir);
  check_data_matches(mc, corpus);
  const fs::path dir = stage_dir(cfg, 1);
  clear_stage(dir);
  std::ofstream log(dir / "train_log.tsv");
  const Model<float> model(mc);
  const TrainResult r = train_stage1(model, init_parameters<float>(mc, cfg.init_seed), corpus.train, corpus.dev,
                                     cfg.stage1, cfg.loss, {&log, nullptr, nullptr});
  save_training(r, Stage::one, cfg, cfg.stage1, out);
  return kExitOk;
}

int cmd_train_stage2(const Common& c, const std::string& init, std::ostream& out) {
  const RunConfig cfg = load_config(c);
  const fs::path init_path = init.empty() ? stage_dir(cfg, 1) / "avg.ckpt" : fs::path(init);
  if (!fs::exists(init_path)) {
    throw MissingFileError("no stage-1 model at " + init_path.string() + " (run `average --stage 1` first)");
  }
  const Checkpoint ck = load_checkpoint(init_path);
  if (ck.meta.stage != 1) throw ManifestError(init_path.string() + " is not a stage-1 checkpoint");
  const ModelConfig mc1 = checkpoint_model(ck);
  check_layout(mc1, ck.params, init_path.string());
  const Corpus corpus = read_corpus(cfg.data_dir);
  check_data_matches(mc1, corpus);
  const Stage2Start start = prepare_stage2(mc1, ck.params, mix_seed(cfg.init_seed, 2));
  const fs::path dir = stage_dir(cfg, 2);
  clear_stage(dir);
  std::ofstream log(dir / "train_log.tsv");
  const Model<float> model(start.config);
  const TrainResult r =
      train_stage2(model, start.params, corpus.train, corpus.dev, cfg.stage2, cfg.loss, {&log, nullptr, nullptr});
  save_training(r, Stage::two, cfg, cfg.stage2, out);
  return kExitOk;
}

int cmd_average(const Common& c, int stage, int top_k, std::vector<std::string> inputs, const std::string& out_path,
                std::ostream& out) {
  const RunConfig cfg = load_config(c);
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  if (paths.empty()) paths = step_checkpoints(stage_dir(cfg, stage));
  if (paths.empty()) {
    throw MissingFileError("no step checkpoints in " + stage_dir(cfg, stage).string() + " (train stage " +
                           std::to_string(stage) + " first)");
  }
  if (top_k <= 0) top_k = stage == 1 ? cfg.stage1.average_top_k : cfg.stage2.average_top_k;
  Checkpoint avg = average_checkpoints(paths, top_k);
  avg.meta.config_hash = cfg.hash();
  avg.meta.code_version = std::string(code_version());
  const fs::path dest = out_path.empty() ? stage_dir(cfg, stage) / "avg.ckpt" : fs::path(out_path);
  save_checkpoint(avg.params, avg.meta, dest);
  out << "averaged " << std::min<std::size_t>(paths.size(), static_cast<std::size_t>(top_k)) << " of "
      << paths.size() << " checkpoints into " << dest.string() << " (mean dev loss " << avg.meta.dev_loss << ")\n";
  return kExitOk;
}

int cmd_decode(const Common& c, const std::string& chunk_text, const std::string& ckpt, const std::string& split_name,
               int limit, const std::string& out_path, std::ostream& out) {
  RunConfig cfg = load_config(c);
  if (!chunk_text.empty()) cfg.decode.chunk = ChunkSpec::parse(chunk_text);
  const fs::path ck_path = ckpt.empty() ? stage_dir(cfg, 2) / "avg.ckpt" : fs::path(ckpt);
  const Checkpoint ck = load_checkpoint(ck_path);
  const ModelConfig mc = checkpoint_model(ck);
  check_layout(mc, ck.params, ck_path.string());
  const Corpus corpus = read_corpus(cfg.data_dir);
  check_data_matches(mc, corpus);
  const Split split = parse_split(split_name);
  const auto& utts = corpus.split(split);
  const std::size_t n = limit > 0 ? std::min<std::size_t>(utts.size(), static_cast<std::size_t>(limit)) : utts.size();

  const Model<float> model(mc);
  std::vector<DecodeRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const DecodeResult r = cfg.decode.chunk.full_context ? offline_decode(model, ck.params, utts[i].features, cfg.decode)
                                                         : streaming_decode(model, ck.params, utts[i].features, cfg.decode);
    records.push_back(make_record(utts[i], r, cfg.decode.chunk));
  }
  std::string chunk_tag = cfg.decode.chunk.to_string();
  std::replace(chunk_tag.begin(), chunk_tag.end(), '/', '-');
  const fs::path dest =
      out_path.empty() ? fs::path(cfg.work_dir) / ("decode_" + split_name + "_" + chunk_tag + ".jsonl") : fs::path(out_path);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  write_decode_file(dest, records, make_stamp("decode", cfg, ck.meta.seed));
  out << "decoded " << n << " " << split_name << " utterances at chunk " << cfg.decode.chunk.to_string() << " into "
      << dest.string() << '\n';
  return kExitOk;
}

void emit(std::ostream& out, const std::string& path, const std::string& text) {
  out << text;
  if (!path.empty()) write_file_atomic(path, text);
}

int cmd_evaluate(const Common& c, const std::string& decode_path, const std::string& out_path, std::ostream& out) {
  const RunConfig cfg = load_config(c);
  const auto records = read_decode_file(decode_path);
  if (records.empty()) throw FormatError(decode_path + " holds no decode records");
  std::vector<ScoredUtterance> scored;
  for (const auto& r : records) scored.push_back({r.ref, r.final_tokens, r.top_beam, r.top_greedy, r.bottom_greedy});
  std::ostringstream os;
  write_quality_report(os, summarize_quality(scored), make_stamp("evaluate", cfg, cfg.stage1.seed));
  emit(out, out_path, os.str());
  return kExitOk;
}

int cmd_latency(const Common& c, const std::string& decode_path, const std::string& prefix, std::ostream& out) {
  const RunConfig cfg = load_config(c);
  const auto records = read_decode_file(decode_path);
  if (records.empty()) throw FormatError(decode_path + " holds no decode records");
  std::vector<UtteranceLatency> lat;
  for (const auto& r : records) {
    if (r.partials.empty()) throw FormatError("decode record " + r.id + " has no partial results");
    lat.push_back(emission_delays(r.id, r.ref, r.spans, r.partials.back(), cfg.max_cer));
  }
  const ChunkSpec chunk = ChunkSpec::parse(records.front().chunk);
  const double model_latency = chunk.full_context ? 0.0 : model_latency_ms(chunk.bottom_chunk);
  const Stamp stamp = make_stamp("latency", cfg, cfg.stage1.seed);
  const std::string base = prefix.empty() ? decode_path : prefix;

  std::ostringstream report;
  write_latency_report(report, summarize_latency(lat), model_latency, stamp);
  emit(out, base + ".latency.tsv", report.str());
  std::ostringstream points;
  write_latency_points(points, lat);
  write_file_atomic(base + ".points.tsv", points.str());
  std::ostringstream spikes;
  write_spike_dump(spikes, records);
  write_file_atomic(base + ".spikes.tsv", spikes.str());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage streaming speech recognition on a synthetic corpus"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(code_version()));

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "Run configuration file (default: $STREAMASR_CONFIG)");
    sub->add_option("--set", common.overrides, "Override one key, as section.key=value")->take_all();
  };

  std::string out_dir, init, ckpt, chunk, split = "test", out_path, decode_path, prefix;
  std::vector<std::string> inputs;
  int stage = 2, top_k = 0, limit = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  add_common(gen);
  gen->add_option("--out", out_dir, "Output directory (default: paths.data_dir)");

  auto* t1 = app.add_subcommand("train-stage1", "Joint training without the added layers");
  add_common(t1);

  auto* t2 = app.add_subcommand("train-stage2", "Distillation training of the added layers");
  add_common(t2);
  t2->add_option("--init", init, "Stage-1 checkpoint (default: <work_dir>/stage1/avg.ckpt)");

  auto* avg = app.add_subcommand("average", "Average the best step checkpoints of a stage");
  add_common(avg);
  avg->add_option("--stage", stage, "Stage whose checkpoints are averaged")->check(CLI::IsMember({1, 2}));
  avg->add_option("--top-k", top_k, "Checkpoints to average, lowest dev loss first (default: train.average_top_k)");
  avg->add_option("--inputs", inputs, "Explicit checkpoint list")->check(CLI::ExistingFile);
  avg->add_option("--out", out_path, "Output checkpoint (default: <work_dir>/stage<N>/avg.ckpt)");

  auto* dec = app.add_subcommand("decode", "Streaming two-pass decoding of one split");
  add_common(dec);
  dec->add_option("--chunk", chunk, "Chunk sizes as B/T, C or full (default: decode.chunk)");
  dec->add_option("--checkpoint", ckpt, "Model (default: <work_dir>/stage2/avg.ckpt)");
  dec->add_option("--split", split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  dec->add_option("--limit", limit, "Decode only the first N utterances");
  dec->add_option("--out", out_path, "Output JSONL (default: <work_dir>/decode_<split>_<chunk>.jsonl)");

  auto* ev = app.add_subcommand("evaluate", "Character error rates of a decode file");
  add_common(ev);
  ev->add_option("decode", decode_path, "Decode JSONL")->required();
  ev->add_option("--out", out_path, "Also write the report here");

  auto* lat = app.add_subcommand("latency", "FTD/LTD percentiles, per-utterance points and spike dump");
  add_common(lat);
  lat->add_option("decode", decode_path, "Decode JSONL")->required();
  lat->add_option("--out-prefix", prefix, "Prefix of the output files (default: the decode file)");

  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_common(show);
  bool list_keys = false;
  show->add_flag("--keys", list_keys, "List the accepted keys instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, out_dir, out);
    if (*t1) return cmd_train_stage1(common, out);
    if (*t2) return cmd_train_stage2(common, init, out);
    if (*avg) return cmd_average(common, stage, top_k, inputs, out_path, out);
    if (*dec) return cmd_decode(common, chunk, ckpt, split, limit, out_path, out);
    if (*ev) return cmd_evaluate(common, decode_path, out_path, out);
    if (*lat) return cmd_latency(common, decode_path, prefix, out);
    if (*show) {
      if (list_keys) {
        for (const auto& k : RunConfig::keys()) out << k << '\n';
      } else {
        const RunConfig cfg = load_config(common);
        out << "# hash " << cfg.hash() << "\n" << cfg.to_text();
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: configuration: " << e.what() << '\n';
    return kExitUsage;
  } catch (const MissingFileError& e) {
    err << "error: missing input: " << e.what() << '\n';
    return kExitMissing;
  } catch (const ManifestError& e) {
    err << "error: mismatch: " << e.what() << '\n';
    return kExitMismatch;
  } catch (const FormatError& e) {
    err << "error: bad file: " << e.what() << '\n';
    return kExitFormat;
  } catch (const NumericError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace streamasr
