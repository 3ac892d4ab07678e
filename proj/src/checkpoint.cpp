// SPDX-License-Identifier: Apache-2.0
#include "moelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moelab/errors.hpp"

namespace moelab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; byte-swapping is not implemented");

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CorruptionError("checkpoint: cannot write " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw CorruptionError("checkpoint: short write to " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptionError("checkpoint: cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void append_doubles(std::string& out, const Arr& a) {
  out.append(reinterpret_cast<const char*>(a.data()), static_cast<std::size_t>(a.size()) * 8);
}

}  // namespace

void save_checkpoint(const std::string& dir, const RunConfig& cfg, const std::string& mode,
                     const EncoderModel& model, const Vocab& vocab, const TrainState* state) {
  fs::create_directories(dir);
  const std::vector<ParamRef> params = parameters(model);

  std::string blob;
  json records = json::array();
  Index offset = 0;
  for (const auto& p : params) {
    json rec;
    rec["name"] = p.name;
    rec["shape"] = p.tensor.shape();
    rec["offset"] = offset;
    rec["count"] = p.tensor.size();
    records.push_back(rec);
    append_doubles(blob, p.tensor.array());
    offset += p.tensor.size();
  }

  json manifest;
  manifest["format"] = "moelab-checkpoint-v1";
  manifest["mode"] = mode;
  manifest["config_hash"] = config_hash(cfg);
  manifest["vocab_size"] = vocab.size();
  manifest["dtype"] = "f64le";
  manifest["param_count"] = offset;
  manifest["params"] = records;
  manifest["has_optimizer"] = state != nullptr;
  if (state) {
    manifest["train_state"] = {{"step", state->step},
                               {"epoch", state->epoch},
                               {"adam_step", state->adam.step}};
  }

  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
  write_file(fs::path(dir) / "params.bin", blob);
  write_file(fs::path(dir) / "config.ini", write_run_config(cfg));
  {
    std::ostringstream os;
    vocab.save(os);
    write_file(fs::path(dir) / "vocab.txt", os.str());
  }
  if (state) {
    std::string opt;
    for (std::size_t i = 0; i < params.size(); ++i) {
      append_doubles(opt, state->adam.m[i]);
      append_doubles(opt, state->adam.v[i]);
    }
    write_file(fs::path(dir) / "optim.bin", opt);
    write_file(fs::path(dir) / "rng.txt", state->rng.serialize());
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw CorruptionError("checkpoint: no manifest.json under " + dir);

  json manifest;
  try {
    manifest = json::parse(read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "moelab-checkpoint-v1")
    throw CompatibilityError("checkpoint: unknown format tag");

  Checkpoint ck;
  {
    std::istringstream is(read_file(root / "config.ini"));
    ck.cfg = parse_run_config(is);
    ck.cfg.finalize();
  }
  if (manifest.value("config_hash", std::uint64_t{0}) != config_hash(ck.cfg))
    throw CompatibilityError("checkpoint: manifest does not match stored config");
  ck.mode = manifest.value("mode", "");
  {
    std::istringstream is(read_file(root / "vocab.txt"));
    ck.vocab = Vocab::load(is);
  }
  if (ck.vocab.size() != manifest.value("vocab_size", Index{-1}) ||
      ck.vocab.size() != ck.cfg.model.vocab_size)
    throw CompatibilityError("checkpoint: vocabulary size mismatch");

  Rng init(0);  // placeholder weights; every value is overwritten below
  ck.model = ck.mode == "teacher" ? init_dense_encoder(ck.cfg.model, init)
                                  : init_moe_encoder(ck.cfg.model, ck.cfg.moe, init);
  const std::vector<ParamRef> params = parameters(ck.model);

  const auto& records = manifest.at("params");
  if (records.size() != params.size())
    throw CompatibilityError("checkpoint: parameter list does not match the stored geometry");

  const std::string blob = read_file(root / "params.bin");
  const Index total = manifest.value("param_count", Index{-1});
  if (static_cast<Index>(blob.size()) != total * 8)
    throw CorruptionError("checkpoint: params.bin length disagrees with manifest");

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = records[i];
    const auto& p = params[i];
    if (rec.value("name", "") != p.name ||
        rec.value("shape", Shape{}) != p.tensor.shape())
      throw CompatibilityError("checkpoint: parameter record mismatch at " + p.name);
    const Index offset = rec.value("offset", Index{-1});
    const Index count = rec.value("count", Index{-1});
    if (count != p.tensor.size() || offset < 0 || offset + count > total)
      throw CorruptionError("checkpoint: parameter extent out of range at " + p.name);
    Arr& value = p.tensor.leaf_array();
    std::memcpy(value.data(), blob.data() + offset * 8, static_cast<std::size_t>(count) * 8);
  }

  ck.has_state = manifest.value("has_optimizer", false);
  if (ck.has_state) {
    const auto& ts = manifest.at("train_state");
    ck.state.step = ts.value("step", Index{0});
    ck.state.epoch = ts.value("epoch", Index{0});
    ck.state.adam.init(params);
    ck.state.adam.step = ts.value("adam_step", Index{0});
    const std::string opt = read_file(root / "optim.bin");
    if (static_cast<Index>(opt.size()) != 2 * total * 8)
      throw CorruptionError("checkpoint: optim.bin length disagrees with manifest");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t bytes = static_cast<std::size_t>(params[i].tensor.size()) * 8;
      std::memcpy(ck.state.adam.m[i].data(), opt.data() + pos, bytes);
      pos += bytes;
      std::memcpy(ck.state.adam.v[i].data(), opt.data() + pos, bytes);
      pos += bytes;
    }
    ck.state.rng = Rng::deserialize(read_file(root / "rng.txt"));
  }
  return ck;
}

}  // namespace moelab
