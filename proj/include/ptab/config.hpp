#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ptab/error.hpp"
#include "ptab/eval.hpp"

namespace ptab {

/// Reads the JSON written by to_json(PipelineConfig) on top of `base`. Absent
/// keys keep the base values, so a file may hold only the fields it overrides.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {}) {
  if (!j.is_object()) throw SchemaError("config must be a JSON object");
  try {
    if (j.contains("textualize")) {
      const auto& t = j["textualize"];
      base.textualize.use_sep = t.value("use_sep", base.textualize.use_sep);
      base.textualize.max_tokens = t.value("max_tokens", base.textualize.max_tokens);
      base.textualize.missing_value_text =
          t.value("missing_value_text", base.textualize.missing_value_text);
    }
    if (j.contains("model")) base.model = nn::model_config_from_json(j["model"], base.model);
    if (j.contains("mf")) base.mf = train_config_from_json(j["mf"], base.mf);
    if (j.contains("cf")) base.cf = train_config_from_json(j["cf"], base.cf);
    if (j.contains("vocab")) {
      base.min_freq = j["vocab"].value("min_freq", base.min_freq);
      base.max_vocab = j["vocab"].value("max_size", base.max_vocab);
    }
    base.skip_mf = j.value("skip_mf", base.skip_mf);
    base.seed = j.value("seed", base.seed);
    base.folds = j.value("folds", base.folds);
    base.jobs = j.value("jobs", base.jobs);
    if (j.contains("n_labeled"))
      base.n_labeled = j["n_labeled"].is_null()
                           ? std::nullopt
                           : std::optional<std::size_t>(j["n_labeled"].get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed config: ") + e.what());
  }
  base.textualize.validate();
  base.mf.validate();
  base.cf.validate();
  return base;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                           PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("config file " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, std::move(base));
}

}  // namespace ptab
