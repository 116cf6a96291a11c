#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "inat/data_io.hpp"
#include "inat/model.hpp"

namespace inat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts need byte swaps");

inline constexpr char kCheckpointMagic[4] = {'I', 'N', 'A', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  uint64_t seed = 0;
  int64_t step = 0;
  int64_t context_length = 0;
  double lr_init = 0.0;
};

namespace detail {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"variant", variant_name(c.variant)}, {"d", c.d},        {"f", c.f},
          {"L", c.L},                           {"H", c.H},        {"vocab", c.vocab},
          {"rope_base", c.rope.base},           {"rotary_dim", c.rope.rotary_dim},
          {"ln_eps", c.ln_eps},                 {"width", width_name(c.width)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  c.d = j.at("d").get<int64_t>();
  c.f = j.at("f").get<int64_t>();
  c.L = j.at("L").get<int64_t>();
  c.H = j.at("H").get<int64_t>();
  c.vocab = j.at("vocab").get<int64_t>();
  c.rope.base = j.at("rope_base").get<double>();
  c.rope.rotary_dim = j.at("rotary_dim").get<int64_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.width = width_from_name(j.at("width").get<std::string>());
  c.validate();
  return c;
}

template <typename Real>
constexpr ElemWidth width_of() {
  return sizeof(Real) == 4 ? ElemWidth::F32 : ElemWidth::F64;
}

}  // namespace detail

// Builds the self-describing header: config, tokenizer, provenance, and the
// tensor manifest in canonical parameter order with payload-relative offsets.
template <typename Real>
nlohmann::json checkpoint_header(ModelParams<Real>& params, const CheckpointMeta& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  int64_t offset = 0;
  const int64_t E = width_bytes(params.config.width);
  params.for_each([&](const std::string& name, Tensor<Real>& t) {
    nlohmann::json shape = nlohmann::json::array();
    for (int64_t d : t.shape()) shape.push_back(d);
    tensors.push_back({{"name", name},
                       {"shape", shape},
                       {"width", width_name(params.config.width)},
                       {"offset", offset}});
    offset += t.numel() * E;
  });
  return {{"config", detail::config_to_json(params.config)},
          {"tokenizer", {{"kind", "byte"}, {"vocab", kVocabSize}, {"separator_id", kSepId}}},
          {"provenance",
           {{"seed", meta.seed},
            {"step", meta.step},
            {"context_length", meta.context_length},
            {"lr_init", meta.lr_init}}},
          {"payload_bytes", offset},
          {"tensors", tensors}};
}

template <typename Real>
void save_checkpoint(ModelParams<Real>& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  if (detail::width_of<Real>() != params.config.width)
    throw ConfigError("save_checkpoint: parameter element type does not match config width");
  const std::string header = checkpoint_header(params, meta).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  const uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  params.for_each([&](const std::string&, Tensor<Real>& t) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(Real)));
  });
  if (!out) throw IoError("save_checkpoint: write failed on " + path.string());
}

struct CheckpointFile {
  nlohmann::json header;
  std::string payload;
};

// Reads and validates the envelope: magic, version, header bounds, manifest
// order/bounds against the payload. Tensor data stays raw.
inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 16) throw IoError("checkpoint: file too short for magic and lengths");
  if (std::memcmp(raw.data(), kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: bad magic (not an INAT file)");
  uint32_t version = 0;
  std::memcpy(&version, raw.data() + 4, sizeof(version));
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  uint64_t header_len = 0;
  std::memcpy(&header_len, raw.data() + 8, sizeof(header_len));
  if (16 + header_len > raw.size()) throw IoError("checkpoint: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  CheckpointFile f;
  f.payload = raw.substr(16 + header_len);
  const auto& tensors = header.at("tensors");
  int64_t expected_offset = 0;
  for (const auto& t : tensors) {
    const int64_t offset = t.at("offset").get<int64_t>();
    if (offset != expected_offset)
      throw IoError("checkpoint: manifest offsets out of order or overlapping at tensor '" +
                    t.at("name").get<std::string>() + "'");
    int64_t numel = 1;
    for (const auto& d : t.at("shape")) numel *= d.get<int64_t>();
    expected_offset = offset + numel * width_bytes(width_from_name(t.at("width").get<std::string>()));
  }
  if (expected_offset != static_cast<int64_t>(f.payload.size()))
    throw IoError("checkpoint: payload size " + std::to_string(f.payload.size()) +
                  " does not match manifest total " + std::to_string(expected_offset));
  f.header = std::move(header);
  return f;
}

template <typename Real>
struct LoadedCheckpoint {
  ModelParams<Real> params;
  CheckpointMeta meta;
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile f = read_checkpoint_file(path);
  const ModelConfig config = detail::config_from_json(f.header.at("config"));
  if (config.width != detail::width_of<Real>())
    throw IoError("checkpoint: stored width " + std::string(width_name(config.width)) +
                  " does not match the requested element type");
  LoadedCheckpoint<Real> out;
  // Structure from config, then fill every tensor from the manifest by name.
  out.params = init_params<Real>(config, 0);
  const auto& prov = f.header.at("provenance");
  out.meta.seed = prov.at("seed").get<uint64_t>();
  out.meta.step = prov.at("step").get<int64_t>();
  out.meta.context_length = prov.at("context_length").get<int64_t>();
  out.meta.lr_init = prov.at("lr_init").get<double>();

  std::unordered_map<std::string, const nlohmann::json*> manifest;
  for (const auto& t : f.header.at("tensors")) manifest[t.at("name").get<std::string>()] = &t;
  size_t used = 0;
  out.params.for_each([&](const std::string& name, Tensor<Real>& t) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw IoError("checkpoint: manifest is missing tensor '" + name + "'");
    const auto& entry = *it->second;
    Shape shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<int64_t>());
    if (shape != t.shape())
      throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                    ", model expects " + shape_str(t.shape()));
    const int64_t offset = entry.at("offset").get<int64_t>();
    std::memcpy(t.mutable_data().data(), f.payload.data() + offset,
                static_cast<size_t>(t.numel()) * sizeof(Real));
    ++used;
  });
  if (used != manifest.size())
    throw IoError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                  " tensors, model has " + std::to_string(used));
  return out;
}

inline std::string checkpoint_manifest_text(const nlohmann::json& header) {
  std::string out;
  out += "config: " + header.at("config").dump() + "\n";
  out += "provenance: " + header.at("provenance").dump() + "\n";
  out += "tokenizer: " + header.at("tokenizer").dump() + "\n";
  out += "payload_bytes: " + std::to_string(header.at("payload_bytes").get<int64_t>()) + "\n";
  for (const auto& t : header.at("tensors")) {
    Shape shape;
    for (const auto& d : t.at("shape")) shape.push_back(d.get<int64_t>());
    out += t.at("name").get<std::string>() + "  shape=" + shape_str(shape) + "  width=" +
           t.at("width").get<std::string>() + "  offset=" + std::to_string(t.at("offset").get<int64_t>()) +
           "\n";
  }
  return out;
}

}  // namespace inat
