#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdfusion/synthdata.hpp"
#include "tdfusion/trainer.hpp"

// Flat `key = value` run configuration. Lines starting with '#' are comments.
// Unknown keys are errors; missing keys keep the desk-scale defaults.

namespace tdfusion::io {

struct RunConfig {
  TrainConfig train;
  SceneSpec scene;
  std::size_t dataset_size = 64;
  std::size_t eval_size = 16;
  std::string out_dir = "runs/default";

  /// Training pairs and the held-out evaluation pairs.
  std::vector<ImagePair> training_set() const { return gen_dataset(scene, dataset_size, derive_seed(train.seed, 1)); }
  std::vector<ImagePair> eval_set() const { return gen_dataset(scene, eval_size, derive_seed(train.seed, 2)); }

  void validate() const {
    try {
      scene.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (dataset_size < 4) throw ConfigError("dataset_size must be >= 4");
    if (eval_size < 4) throw ConfigError("eval_size must be >= 4");
    train.validate(dataset_size);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for '" + key + "': '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad value for '" + key + "': expected true or false, got '" + text + "'");
}

/// Comma-separated widths; "none" or empty for no hidden layers.
inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

inline std::string format_widths(const std::vector<std::size_t>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
  using R = RunConfig;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto size_field = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[key, getter](R& c, const std::string& v) { getter(c) = parse_number<std::size_t>(key, v); },
                    [getter](const R& c) { return std::to_string(getter(c)); }}});
    };
    auto real_field = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[key, getter](R& c, const std::string& v) { getter(c) = parse_number<double>(key, v); },
                    [getter](const R& c) { return format_double(getter(c)); }}});
    };
    auto bool_field = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[key, getter](R& c, const std::string& v) { getter(c) = parse_bool(key, v); },
                    [getter](const R& c) { return std::string(getter(c) ? "true" : "false"); }}});
    };
    auto widths_field = [&](const std::string& key, auto getter) {
      t.push_back({key,
                   {[key, getter](R& c, const std::string& v) { getter(c) = parse_widths(key, v); },
                    [getter](const R& c) { return format_widths(getter(c)); }}});
    };

    size_field("epochs", [](auto& c) -> auto& { return c.train.epochs; });
    size_field("meta_steps", [](auto& c) -> auto& { return c.train.meta_steps; });
    size_field("fusion_steps", [](auto& c) -> auto& { return c.train.fusion_steps; });
    real_field("lr_fusion_inner", [](auto& c) -> auto& { return c.train.lr_fusion_inner; });
    real_field("lr_task_inner", [](auto& c) -> auto& { return c.train.lr_task_inner; });
    real_field("lr_lossgen", [](auto& c) -> auto& { return c.train.lr_lossgen; });
    real_field("lr_fusion", [](auto& c) -> auto& { return c.train.lr_fusion; });
    real_field("lr_task", [](auto& c) -> auto& { return c.train.lr_task; });
    real_field("alpha", [](auto& c) -> auto& { return c.train.alpha; });
    size_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    t.push_back({"seed",
                 {[](R& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
                  [](const R& c) { return std::to_string(c.train.seed); }}});
    t.push_back({"height",
                 {[](R& c, const std::string& v) { c.train.height = c.scene.height = parse_number<std::size_t>("height", v); },
                  [](const R& c) { return std::to_string(c.train.height); }}});
    t.push_back({"width",
                 {[](R& c, const std::string& v) { c.train.width = c.scene.width = parse_number<std::size_t>("width", v); },
                  [](const R& c) { return std::to_string(c.train.width); }}});
    size_field("classes", [](auto& c) -> auto& { return c.train.classes; });
    t.push_back({"optimizer",
                 {[](R& c, const std::string& v) {
                    try {
                      c.train.optimizer = parse_optimizer(v);
                    } catch (const std::invalid_argument& e) {
                      throw ConfigError(e.what());
                    }
                  },
                  [](const R& c) { return std::string(optimizer_name(c.train.optimizer)); }}});
    bool_field("fixed_half_weights", [](auto& c) -> auto& { return c.train.fixed_half_weights; });
    widths_field("fusion_hidden", [](auto& c) -> auto& { return c.train.fusion_hidden; });
    widths_field("task_hidden", [](auto& c) -> auto& { return c.train.task_hidden; });
    widths_field("lossgen_hidden", [](auto& c) -> auto& { return c.train.lossgen_hidden; });
    size_field("kernel", [](auto& c) -> auto& { return c.train.kernel; });

    size_field("dataset_size", [](auto& c) -> auto& { return c.dataset_size; });
    size_field("eval_size", [](auto& c) -> auto& { return c.eval_size; });
    size_field("scene.targets_min", [](auto& c) -> auto& { return c.scene.targets_min; });
    size_field("scene.targets_max", [](auto& c) -> auto& { return c.scene.targets_max; });
    real_field("scene.target_radius_min", [](auto& c) -> auto& { return c.scene.target_radius_min; });
    real_field("scene.target_radius_max", [](auto& c) -> auto& { return c.scene.target_radius_max; });
    size_field("scene.patches_min", [](auto& c) -> auto& { return c.scene.patches_min; });
    size_field("scene.patches_max", [](auto& c) -> auto& { return c.scene.patches_max; });
    size_field("scene.patch_size_min", [](auto& c) -> auto& { return c.scene.patch_size_min; });
    size_field("scene.patch_size_max", [](auto& c) -> auto& { return c.scene.patch_size_max; });
    size_field("scene.stripe_period", [](auto& c) -> auto& { return c.scene.stripe_period; });
    real_field("scene.a_background", [](auto& c) -> auto& { return c.scene.a_background; });
    real_field("scene.a_target", [](auto& c) -> auto& { return c.scene.a_target; });
    real_field("scene.b_background", [](auto& c) -> auto& { return c.scene.b_background; });
    real_field("scene.b_stripe_amplitude", [](auto& c) -> auto& { return c.scene.b_stripe_amplitude; });
    real_field("scene.noise", [](auto& c) -> auto& { return c.scene.noise; });
    bool_field("scene.identical_modalities", [](auto& c) -> auto& { return c.scene.identical_modalities; });
    t.push_back({"out_dir",
                 {[](R& c, const std::string& v) { c.out_dir = v; }, [](const R& c) { return c.out_dir; }}});
    return t;
  }();
  return table;
}

}  // namespace detail

/// Parses config text. `origin` names the source in diagnostics.
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    const auto& table = detail::fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(seen[key]) + ")");
    seen[key] = lineno;
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

/// Reads a config file and applies the TDF_SEED environment override.
inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config(ss.str(), path.string());
  if (const char* env = std::getenv("TDF_SEED"); env != nullptr && *env != '\0') {
    cfg.train.seed = detail::parse_number<std::uint64_t>("TDF_SEED", env);
  }
  return cfg;
}

/// Canonical text with every key; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace tdfusion::io
