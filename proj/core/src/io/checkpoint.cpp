#include "streamasr/io/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "streamasr/errors.hpp"
#include "streamasr/training/optim.hpp"

namespace streamasr {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(std::string_view bytes, std::size_t offset) {
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  return value;
}

std::uint32_t crc(std::string_view bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + done), n);
    done += n;
  }
  return static_cast<std::uint32_t>(c);
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return {{"stage", m.stage},           {"step", m.step},
          {"epoch", m.epoch},           {"dev_loss", m.dev_loss},
          {"dev_distill", m.dev_distill}, {"config_hash", m.config_hash},
          {"seed", m.seed},             {"code_version", m.code_version},
          {"model_config", m.model_config}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.stage = j.value("stage", 0);
  m.step = j.value("step", 0L);
  m.epoch = j.value("epoch", 0);
  m.dev_loss = j.value("dev_loss", 0.0);
  m.dev_distill = j.value("dev_distill", 0.0);
  m.config_hash = j.value("config_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.code_version = j.value("code_version", "");
  m.model_config = j.value("model_config", "");
  return m;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("no such file: " + path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save_checkpoint(const ParameterSet<float>& params, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params.tensors()) {
    tensors.push_back({{"path", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", blob.size()}});
    blob.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  nlohmann::json aliases = nlohmann::json::object();
  for (const auto& [a, target] : params.aliases()) aliases[a] = target;
  const nlohmann::json header = {{"tensors", tensors},
                                 {"aliases", aliases},
                                 {"meta", meta_to_json(meta)},
                                 {"blob_bytes", blob.size()},
                                 {"crc32", crc(blob)}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += blob;
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = "checkpoint " + path.string() + ": ";
  constexpr std::size_t fixed = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(where + "not a checkpoint file");
  }
  const auto version = take<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kCheckpointVersion) {
    throw FormatError(where + "format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const auto header_len = take<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (bytes.size() - fixed < header_len) throw FormatError(where + "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "corrupt header: " + e.what());
  }
  const std::string_view blob = std::string_view(bytes).substr(fixed + header_len);
  const auto blob_bytes = header.at("blob_bytes").get<std::size_t>();
  if (blob.size() != blob_bytes) {
    throw FormatError(where + "blob length " + std::to_string(blob.size()) + " does not match manifest " +
                      std::to_string(blob_bytes) + " (checksum cannot be verified)");
  }
  if (crc(blob) != header.at("crc32").get<std::uint32_t>()) throw FormatError(where + "checksum mismatch");

  Checkpoint ck;
  for (const auto& entry : header.at("tensors")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (entry.at("dtype").get<std::string>() != "f32") throw FormatError(where + "unsupported dtype");
    const std::size_t n = shape_numel(shape);
    if (offset + n * sizeof(float) > blob.size()) throw FormatError(where + "tensor extends past the blob");
    std::vector<float> values(n);
    std::memcpy(values.data(), blob.data() + offset, n * sizeof(float));
    ck.params.add(entry.at("path").get<std::string>(), Tensor<float>(shape, std::move(values)));
  }
  for (const auto& [a, target] : header.at("aliases").items()) ck.params.alias(a, target.get<std::string>());
  ck.meta = meta_from_json(header.at("meta"));
  return ck;
}

Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths, int k) {
  if (k < 1) throw ConfigError("average: k must be at least 1");
  if (paths.empty()) throw ContractError("average: no checkpoints given");
  std::vector<Checkpoint> all;
  for (const auto& p : paths) all.push_back(load_checkpoint(p));
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (!all[i].params.same_layout(all[0].params)) {
      throw FormatError("average: manifest of " + paths[i].string() + " differs from " + paths[0].string());
    }
  }
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return all[a].meta.dev_loss < all[b].meta.dev_loss; });
  order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
  std::vector<const ParameterSet<float>*> sets;
  for (std::size_t i : order) sets.push_back(&all[i].params);
  Checkpoint out;
  out.params = average_parameters<float>(sets);
  out.meta = all[order.front()].meta;
  double dev = 0.0;
  for (std::size_t i : order) dev += all[i].meta.dev_loss;
  out.meta.dev_loss = dev / static_cast<double>(order.size());
  return out;
}

}  // namespace streamasr
