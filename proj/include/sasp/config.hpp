#pragma once

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored; unknown keys are errors.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sasp/model.hpp"
#include "sasp/optim.hpp"

namespace sasp {

struct RunConfig {
  SaspConfig model;
  TrainConfig train;
  std::string feature_file;
  std::string manifest;
  std::string cub_root;
  std::string output_dir = "sasp_out";
  std::set<std::string> explicit_keys;

  bool is_set(const std::string& key) const { return explicit_keys.count(key) > 0; }

  void validate() const {
    if (feature_file.empty() == cub_root.empty())
      throw ConfigError("exactly one of feature_file or cub_root must be set");
    if (!cub_root.empty() && model.backbone.mode != BackboneMode::kTinyCnn)
      throw ConfigError("cub_root needs backbone=tiny-cnn");
    if (!feature_file.empty() && model.backbone.mode != BackboneMode::kPrecomputed)
      throw ConfigError("feature_file needs backbone=precomputed");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    model.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

template <std::size_t N>
std::array<double, N> to_triple(const std::string& key, const std::string& v) {
  const auto parts = split_commas(v);
  if (parts.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_double(key, parts[i]);
  return out;
}

}  // namespace detail

inline void apply_config_key(RunConfig& rc, const std::string& key, const std::string& v) {
  using namespace detail;
  using Setter = std::function<void(const std::string&)>;
  SaspConfig& m = rc.model;
  BackboneConfig& b = rc.model.backbone;
  TrainConfig& t = rc.train;
  const std::map<std::string, Setter> setters = {
      {"backbone", [&](const std::string& s) { b.mode = parse_backbone_mode(s); }},
      {"channels", [&](const std::string& s) { b.channels = to_size(key, s); }},
      {"feature_h", [&](const std::string& s) { b.height = to_size(key, s); }},
      {"feature_w", [&](const std::string& s) { b.width = to_size(key, s); }},
      {"stage_widths",
       [&](const std::string& s) {
         b.stage_widths.clear();
         if (!s.empty())
           for (const auto& p : split_commas(s)) b.stage_widths.push_back(to_size(key, p));
       }},
      {"input_h", [&](const std::string& s) { b.input_height = to_size(key, s); }},
      {"input_w", [&](const std::string& s) { b.input_width = to_size(key, s); }},
      {"norm_mean", [&](const std::string& s) { b.norm_mean = to_triple<3>(key, s); }},
      {"norm_std", [&](const std::string& s) { b.norm_std = to_triple<3>(key, s); }},
      {"classes", [&](const std::string& s) { m.classes = to_size(key, s); }},
      {"csw_reduction", [&](const std::string& s) { m.csw_reduction = to_size(key, s); }},
      {"head_hidden1", [&](const std::string& s) { m.head_hidden1 = to_size(key, s); }},
      {"head_hidden2", [&](const std::string& s) { m.head_hidden2 = to_size(key, s); }},
      {"dropout", [&](const std::string& s) { m.dropout = to_double(key, s); }},
      {"batch_size", [&](const std::string& s) { t.batch_size = to_size(key, s); }},
      {"lr_init", [&](const std::string& s) { t.lr_init = to_double(key, s); }},
      {"lr_final", [&](const std::string& s) { t.lr_final = to_double(key, s); }},
      {"decay_power", [&](const std::string& s) { t.decay_power = to_double(key, s); }},
      {"epochs", [&](const std::string& s) { t.epochs = to_size(key, s); }},
      {"weight_decay", [&](const std::string& s) { t.weight_decay = to_double(key, s); }},
      {"momentum", [&](const std::string& s) { t.momentum = to_double(key, s); }},
      {"seed", [&](const std::string& s) { t.seed = to_size(key, s); }},
      {"feature_file", [&](const std::string& s) { rc.feature_file = s; }},
      {"manifest", [&](const std::string& s) { rc.manifest = s; }},
      {"cub_root", [&](const std::string& s) { rc.cub_root = s; }},
      {"output_dir", [&](const std::string& s) { rc.output_dir = s; }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(v);
  rc.explicit_keys.insert(key);
}

// Parses without cross-field validation; data-derived fields may still be filled in.
inline RunConfig parse_run_config(std::istream& is) {
  RunConfig rc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (rc.is_set(key)) throw ConfigError("config key '" + key + "' set twice");
    apply_config_key(rc, key, detail::trim(line.substr(eq + 1)));
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  RunConfig rc = parse_run_config(is);
  // Relative data paths resolve against the config file's directory.
  const auto base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&rc.feature_file, &rc.manifest, &rc.cub_root, &rc.output_dir})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return rc;
}

}  // namespace sasp
