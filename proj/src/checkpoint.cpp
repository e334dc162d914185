#include "ctl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctl/error.hpp"

namespace ctl {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "ctl-checkpoint-v1";

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ParamList all_tensors(ModelParams& params, NormStats& stats) {
  ParamList list = params.collect();
  list.push_back({"norm.mean", &stats.mean});
  list.push_back({"norm.std", &stats.std});
  return list;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParameterError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw ParameterError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  // collect() hands out mutable pointers; the copy keeps ckpt untouched.
  ModelParams params = ckpt.params;
  NormStats stats = ckpt.stats;
  const ParamList list = all_tensors(params, stats);

  std::string blob;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& p : list) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor->shape()}, {"offset", offset}, {"count", p.tensor->size()}});
    for (double v : p.tensor->values()) put_le(blob, v);
    offset += 8 * p.tensor->size();
  }
  json manifest{{"format", kFormat},
                {"seed", ckpt.config.train.seed},
                {"config", json::parse(config_to_json(ckpt.config))},
                {"params_file", "params.bin"},
                {"vocab_file", "vocab.json"},
                {"tensors", tensors}};

  write_file_atomic(dir / "params.bin", blob);
  std::filesystem::path vocab_tmp = dir / "vocab.json.tmp";
  save_vocab(ckpt.vocab, vocab_tmp);
  std::filesystem::rename(vocab_tmp, dir / "vocab.json");
  // Manifest last: a directory with a manifest is complete.
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::filesystem::path mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw ConfigError("no checkpoint manifest at " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(slurp(mpath));
  } catch (const json::parse_error& e) {
    throw ParseError(mpath.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw ParseError(mpath.string() + ": unknown checkpoint format");

  Checkpoint ck;
  ck.config = config_from_json(manifest.at("config").dump());
  ck.config.model.validate();
  ck.vocab = load_vocab(dir / manifest.value("vocab_file", "vocab.json"));
  if (ck.vocab.size() != ck.config.model.vocab) {
    throw ConfigError("checkpoint vocab has " + std::to_string(ck.vocab.size()) + " words, config says " +
                      std::to_string(ck.config.model.vocab));
  }
  ck.params = ModelParams::zeros(ck.config.model);
  ck.stats = NormStats{Tensor({ck.config.model.n_nodes, ck.config.model.channels}),
                       Tensor({ck.config.model.n_nodes, ck.config.model.channels})};
  const ParamList list = all_tensors(ck.params, ck.stats);

  const std::string blob = slurp(dir / manifest.value("params_file", "params.bin"));
  const json& tensors = manifest.at("tensors");
  if (!tensors.is_array() || tensors.size() != list.size()) {
    throw ConfigError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, config implies " +
                      std::to_string(list.size()));
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& t = tensors[i];
    const std::string name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Tensor::Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    if (name != list[i].name) throw ConfigError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                                                "', expected '" + list[i].name + "'");
    if (shape != list[i].tensor->shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                        shape_string(list[i].tensor->shape()));
    }
    const std::size_t count = list[i].tensor->size();
    if (offset + 8 * count > blob.size()) throw ParseError("params.bin truncated at tensor '" + name + "'");
    for (std::size_t k = 0; k < count; ++k) (*list[i].tensor)[k] = get_le(bytes + offset + 8 * k);
  }
  return ck;
}

}  // namespace ctl
