#pragma once

#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>

#include "decg/data.hpp"
#include "decg/model.hpp"
#include "decg/optim.hpp"
#include "decg/text.hpp"
#include "decg/training.hpp"

namespace decg {

/// Everything a run depends on. Layering: preset, then config file, then command-line flags.
struct RunConfig {
  std::string preset;  // defaults from the schema when empty
  std::string data;
  std::string schema = "beats";
  std::string test_data;
  int k = 5;
  double subsample = 1.0;  // stratified fraction of `data` to use
  ModelConfig model;
  TrainConfig train;

  static bool is_run_key(const std::string& key) {
    return key == "preset" || key == "data" || key == "schema" || key == "test_data" || key == "k" ||
           key == "subsample";
  }

  std::string resolved_preset() const {
    if (!preset.empty()) return preset;
    return schema == "cinc" ? "cinc" : "mitbih";
  }

  std::string to_text() const {
    std::string out;
    out += "preset=" + resolved_preset() + "\n";
    out += "data=" + data + "\n";
    out += "schema=" + schema + "\n";
    out += "test_data=" + test_data + "\n";
    out += "k=" + std::to_string(k) + "\n";
    out += "subsample=" + text::format_real(subsample) + "\n";
    out += model.to_text();
    out += train_config_text(train);
    return out;
  }

  void validate() const {
    parse_schema(schema);
    preset_by_name(resolved_preset());
    if (k < 2) throw std::invalid_argument("k must be >= 2, got " + std::to_string(k));
    if (!(subsample > 0.0 && subsample <= 1.0)) throw std::invalid_argument("subsample must be in (0, 1]");
    model.validate();
    train.validate();
  }
};

/// Rejects keys that no layer understands.
inline void check_known_keys(const std::map<std::string, std::string>& kv, const std::string& source) {
  for (const auto& [key, value] : kv) {
    if (!RunConfig::is_run_key(key) && !ModelConfig::has_key(key) && !is_train_key(key))
      throw std::invalid_argument(source + ": unknown key '" + key + "'");
  }
}

/// Builds a RunConfig from layered key=value maps (later maps win).
inline RunConfig resolve_run_config(const std::map<std::string, std::string>& file,
                                    const std::map<std::string, std::string>& flags) {
  check_known_keys(file, "config file");
  check_known_keys(flags, "command line");
  std::map<std::string, std::string> merged = file;
  for (const auto& [k, v] : flags) merged[k] = v;
  RunConfig rc;
  if (auto it = merged.find("schema"); it != merged.end()) rc.schema = it->second;
  if (auto it = merged.find("preset"); it != merged.end()) rc.preset = it->second;
  parse_schema(rc.schema);
  rc.model = preset_by_name(rc.resolved_preset());
  if (rc.resolved_preset() == "mitbih") rc.train.epochs = 50;
  std::map<std::string, std::string> model_keys;
  for (const auto& [k, v] : merged)
    if (ModelConfig::has_key(k)) model_keys.emplace(k, v);
  rc.model = ModelConfig::from_map(model_keys, rc.model);
  rc.train = train_config_from_map(merged, rc.train);
  if (auto it = merged.find("data"); it != merged.end()) rc.data = it->second;
  if (auto it = merged.find("test_data"); it != merged.end()) rc.test_data = it->second;
  if (auto it = merged.find("k"); it != merged.end()) rc.k = text::to_number<int>(it->second, "k");
  if (auto it = merged.find("subsample"); it != merged.end())
    rc.subsample = text::to_number<double>(it->second, "subsample");
  rc.validate();
  return rc;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path);
  const std::string body{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return text::parse_key_values(body, path);
}

}  // namespace decg
