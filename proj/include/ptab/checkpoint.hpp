#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptab/encoder.hpp"
#include "ptab/error.hpp"
#include "ptab/tokenizer.hpp"

namespace ptab {

enum class Stage { mf, cf };

inline std::string to_string(Stage s) { return s == Stage::mf ? "MF" : "CF"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "MF") return Stage::mf;
  if (s == "CF") return Stage::cf;
  throw FormatError("unknown checkpoint stage '" + s + "'");
}

/// What a stage-tagged snapshot was selected on, plus what is needed to use it
/// on new rows (vocabulary, textualization settings).
struct CheckpointMeta {
  Stage stage = Stage::mf;
  std::size_t epoch = 0;
  double metric = 0.0;          // MF: validation loss, CF: validation AUC
  std::map<std::string, std::size_t> provenance;
  std::string config_digest;
  std::optional<Vocabulary> vocab;
  nlohmann::json extra = nlohmann::json::object();

  std::string metric_name() const { return stage == Stage::mf ? "val_loss" : "val_auc"; }
};

inline nlohmann::json to_json(const CheckpointMeta& m) {
  nlohmann::json j = {{"stage", to_string(m.stage)},
                      {"epoch", m.epoch},
                      {"metric_name", m.metric_name()},
                      {"metric", m.metric},
                      {"provenance", m.provenance},
                      {"config_digest", m.config_digest},
                      {"extra", m.extra}};
  if (m.vocab) j["vocabulary"] = to_json(*m.vocab);
  return j;
}

inline CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.stage = parse_stage(j.at("stage").get<std::string>());
  m.epoch = j.at("epoch").get<std::size_t>();
  m.metric = j.at("metric").get<double>();
  m.provenance = j.value("provenance", std::map<std::string, std::size_t>{});
  m.config_digest = j.value("config_digest", std::string());
  if (j.contains("vocabulary")) m.vocab = vocabulary_from_json(j["vocabulary"]);
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

/// Hex FNV-1a of a JSON value's canonical dump (keys are sorted by nlohmann).
inline std::string json_digest(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'A', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}
}  // namespace detail

struct Checkpoint {
  nn::Parameters<float> params;
  CheckpointMeta meta;
  const nn::ModelConfig& config() const { return params.config; }
};

/// "PTAB" | u32 version | u32 metadata length | JSON metadata | float32 tensors,
/// all little-endian, tensors row-major in manifest order.
inline std::string serialize_checkpoint(const nn::Parameters<float>& params,
                                        const CheckpointMeta& meta) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t n_floats = 0;
  nn::for_each_tensor(params, [&](const std::string& name, const nn::Mat<float>& t) {
    manifest.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
    n_floats += static_cast<std::size_t>(t.size());
  });
  const nlohmann::json header = {
      {"config", nn::to_json(params.config)}, {"meta", to_json(meta)}, {"tensors", manifest}};
  const std::string js = header.dump();
  std::string out;
  out.reserve(12 + js.size() + 4 * n_floats);
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(js.size()));
  out += js;
  nn::for_each_tensor(params, [&](const std::string&, const nn::Mat<float>& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(t.data()[i]));
  });
  return out;
}

namespace detail {
inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  const auto version = detail::get_u32(bytes, 4);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto js_len = detail::get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(js_len))
    throw FormatError("checkpoint truncated inside metadata");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, js_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.params = nn::zero_params<float>(nn::model_config_from_json(header.at("config")));
    ck.meta = checkpoint_meta_from_json(header.at("meta"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const auto& manifest = header.at("tensors");
  std::size_t idx = 0;
  std::size_t at = 12 + js_len;
  nn::for_each_tensor(ck.params, [&](const std::string& name, nn::Mat<float>& t) {
    if (idx >= manifest.size()) throw FormatError("checkpoint manifest too short");
    const auto& e = manifest[idx++];
    const auto shape = e.at("shape").get<std::vector<long>>();
    if (e.at("name").get<std::string>() != name || shape.size() != 2 ||
        shape[0] != t.rows() || shape[1] != t.cols())
      throw FormatError("checkpoint tensor '" + name + "' does not match the config");
    const auto need = 4 * static_cast<std::size_t>(t.size());
    if (bytes.size() < at + need) throw FormatError("checkpoint truncated in tensor '" + name + "'");
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = std::bit_cast<float>(detail::get_u32(bytes, at + 4 * static_cast<std::size_t>(i)));
    at += need;
  });
  if (idx != manifest.size()) throw FormatError("checkpoint manifest has extra tensors");
  if (at != bytes.size()) throw FormatError("trailing bytes after checkpoint tensors");
  return ck;
}
}  // namespace detail

/// Throws FormatError on any malformed input; nothing is returned partially.
inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  try {
    return detail::parse_checkpoint(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const nn::Parameters<float>& params, const CheckpointMeta& meta) {
  const auto bytes = serialize_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ptab
