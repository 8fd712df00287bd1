#pragma once

// JSON run configuration: model, freq, train and paths sections.

#include "mcms/net.hpp"
#include "mcms/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace mcms {

struct PathsConfig {
  std::string data;      // dataset directory holding manifest.json
  std::string out_dir = "runs/default";
  std::string weights;   // initial weights; empty = fresh init

  friend bool operator==(const PathsConfig &, const PathsConfig &) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;

  void validate() const {
    model.validate();
    train.validate();
  }
  friend bool operator==(const RunConfig &, const RunConfig &) = default;
};

namespace detail {
using nlohmann::json;

inline void reject_unknown(const json &obj, const std::string &section,
                           const std::set<std::string> &allowed) {
  if (!obj.is_object())
    throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" +
                        (section.empty() ? "" : section + ".") + it.key() + "'");
}

template <class V>
void read_key(const json &obj, const std::string &section, const char *key,
              V &dst) {
  const auto it = obj.find(key);
  if (it == obj.end())
    return;
  const std::string name = section + "." + key;
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean())
        throw ConfigError("config key '" + name + "' must be a boolean");
      dst = it->template get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_unsigned())
        throw ConfigError("config key '" + name +
                          "' must be a non-negative integer");
      dst = it->template get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number())
        throw ConfigError("config key '" + name + "' must be a number");
      dst = it->template get<V>();
    } else {
      if (!it->is_string())
        throw ConfigError("config key '" + name + "' must be a string");
      dst = it->template get<V>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config key '" + name + "': " + e.what());
  }
}

// Re-raises a validation failure with its key spelled out.
inline void validate_named(const RunConfig &c) {
  try {
    c.validate();
  } catch (const ConfigError &e) {
    const std::string msg = e.what();
    static const char *keys[][2] = {
        {"base_width", "model.base_width"}, {"hf_blocks", "model.hf_blocks"},
        {"lf_blocks", "model.lf_blocks"}, {"stage3_blocks", "model.stage3_blocks"},
        {"decoder_blocks", "model.decoder_blocks"},
        {"branch_attention_pool", "model.branch_attention_pool"}};
    for (const auto &k : keys)
      if (msg.rfind(k[0], 0) == 0)
        throw ConfigError("invalid config key '" + std::string(k[1]) + "': " + msg);
    throw ConfigError("invalid config: " + msg);
  }
}
} // namespace detail

inline nlohmann::ordered_json config_to_json(const RunConfig &c) {
  nlohmann::ordered_json j;
  j["model"] = {{"base_width", c.model.base_width},
                {"hf_blocks", c.model.hf_blocks},
                {"lf_blocks", c.model.lf_blocks},
                {"stage3_blocks", c.model.stage3_blocks},
                {"decoder_blocks", c.model.decoder_blocks},
                {"branch_attention_pool", c.model.branch_attention_pool},
                {"use_mssa", c.model.use_mssa},
                {"use_gff", c.model.use_gff},
                {"stage3_skips", c.model.stage3_skips}};
  j["freq"] = {{"tau", c.model.freq_tau}};
  j["train"] = {{"lr", c.train.lr},     {"batch", c.train.batch},
                {"steps", c.train.steps}, {"crop", c.train.crop},
                {"seed", c.train.seed}, {"flip", c.train.flip}};
  j["paths"] = {{"data", c.paths.data},
                {"out_dir", c.paths.out_dir},
                {"weights", c.paths.weights}};
  return j;
}

inline RunConfig config_from_json(const nlohmann::json &j) {
  using detail::read_key;
  RunConfig c;
  detail::reject_unknown(j, "", {"model", "freq", "train", "paths"});
  if (j.contains("model")) {
    const auto &m = j["model"];
    detail::reject_unknown(m, "model",
                           {"base_width", "hf_blocks", "lf_blocks",
                            "stage3_blocks", "decoder_blocks",
                            "branch_attention_pool", "use_mssa", "use_gff",
                            "stage3_skips"});
    read_key(m, "model", "base_width", c.model.base_width);
    read_key(m, "model", "hf_blocks", c.model.hf_blocks);
    read_key(m, "model", "lf_blocks", c.model.lf_blocks);
    read_key(m, "model", "stage3_blocks", c.model.stage3_blocks);
    read_key(m, "model", "decoder_blocks", c.model.decoder_blocks);
    read_key(m, "model", "branch_attention_pool", c.model.branch_attention_pool);
    read_key(m, "model", "use_mssa", c.model.use_mssa);
    read_key(m, "model", "use_gff", c.model.use_gff);
    read_key(m, "model", "stage3_skips", c.model.stage3_skips);
  }
  if (j.contains("freq")) {
    detail::reject_unknown(j["freq"], "freq", {"tau"});
    read_key(j["freq"], "freq", "tau", c.model.freq_tau);
  }
  if (j.contains("train")) {
    const auto &t = j["train"];
    detail::reject_unknown(t, "train",
                           {"lr", "batch", "steps", "crop", "seed", "flip"});
    read_key(t, "train", "lr", c.train.lr);
    read_key(t, "train", "batch", c.train.batch);
    read_key(t, "train", "steps", c.train.steps);
    read_key(t, "train", "crop", c.train.crop);
    read_key(t, "train", "seed", c.train.seed);
    read_key(t, "train", "flip", c.train.flip);
  }
  if (j.contains("paths")) {
    const auto &p = j["paths"];
    detail::reject_unknown(p, "paths", {"data", "out_dir", "weights"});
    read_key(p, "paths", "data", c.paths.data);
    read_key(p, "paths", "out_dir", c.paths.out_dir);
    read_key(p, "paths", "weights", c.paths.weights);
  }
  detail::validate_named(c);
  return c;
}

inline RunConfig parse_config(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  try {
    return parse_config(text);
  } catch (const ConfigError &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Writes dir/resolved_config.json and returns its path.
inline std::filesystem::path write_resolved_config(const RunConfig &c,
                                                   const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "resolved_config.json";
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << config_to_json(c).dump(2) << '\n';
  return path;
}

} // namespace mcms
