#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/json_util.hpp"
#include "hpc_sentinel/numfmt.hpp"

namespace hpcs {

inline constexpr const char* kEnvPrefix = "HPC_SENTINEL_";

enum class ConfigSource { defaults, file, env, flag };

inline std::string_view to_string(ConfigSource s) {
  switch (s) {
    case ConfigSource::defaults: return "default";
    case ConfigSource::file: return "config";
    case ConfigSource::env: return "env";
    case ConfigSource::flag: return "flag";
  }
  return "?";
}

// "window-ms" -> "HPC_SENTINEL_WINDOW_MS"
inline std::string env_name(std::string_view key) {
  std::string out = kEnvPrefix;
  for (char c : key)
    out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

// String-valued settings for one subcommand. Later layers win:
// defaults < config file < environment < command-line flags.
class AppConfig {
 public:
  using Getenv = std::function<const char*(const char*)>;

  explicit AppConfig(std::string section = {}) : section_(std::move(section)) {}

  void declare(const std::string& key, std::string default_value, std::string help = {}) {
    if (entries_.count(key)) throw Error("config key declared twice: " + key);
    entries_[key] = {std::move(default_value), ConfigSource::defaults, std::move(help)};
    order_.push_back(key);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::vector<std::string>& keys() const { return order_; }

  // A JSON object. Top-level scalars apply to any subcommand declaring the key;
  // an object named after this subcommand applies only here and must hold known keys.
  void load_file_text(const std::string& text, const std::string& ctx = "config") {
    const auto doc = jsonu::parse(text, ctx);
    if (!doc.is_object()) throw ConfigError("config", ctx + ": expected a JSON object");
    for (const auto& [k, v] : doc.items()) {
      if (v.is_object()) continue;
      if (has(k)) set(k, scalar_text(k, v), ConfigSource::file);
    }
    if (!section_.empty() && doc.contains(section_)) {
      const auto& sec = doc.at(section_);
      if (!sec.is_object()) throw ConfigError(section_, ctx + ": section must be an object");
      for (const auto& [k, v] : sec.items()) {
        if (!has(k)) throw ConfigError(k, ctx + ": unknown key in section '" + section_ + "'");
        set(k, scalar_text(k, v), ConfigSource::file);
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    load_file_text(ss.str(), path);
  }

  void load_env(const Getenv& getenv = [](const char* n) { return std::getenv(n); }) {
    for (const auto& k : order_)
      if (const char* v = getenv(env_name(k).c_str())) set(k, v, ConfigSource::env);
  }

  void set_flag(const std::string& key, std::string value) {
    set(key, std::move(value), ConfigSource::flag);
  }

  const std::string& get(const std::string& key) const { return entry(key).value; }
  ConfigSource source(const std::string& key) const { return entry(key).source; }

  long long get_int(const std::string& key) const {
    const auto& s = get(key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ConfigError(key, "expected an integer, got '" + s + "'");
    return v;
  }

  std::uint64_t get_u64(const std::string& key) const {
    const auto& s = get(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    return v;
  }

  double get_double(const std::string& key) const {
    try {
      return parse_double(get(key));
    } catch (const DecodeError&) {
      throw ConfigError(key, "expected a number, got '" + get(key) + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    std::string s = get(key);
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off" || s.empty()) return false;
    throw ConfigError(key, "expected a boolean, got '" + get(key) + "'");
  }

  // One "key = value  [source]" line per setting.
  std::string print() const {
    std::size_t w = 0;
    for (const auto& k : order_) w = std::max(w, k.size());
    std::ostringstream os;
    for (const auto& k : order_) {
      const auto& e = entries_.at(k);
      os << k << std::string(w - k.size(), ' ') << " = " << (e.value.empty() ? "\"\"" : e.value)
         << "  [" << to_string(e.source) << "]\n";
    }
    return os.str();
  }

 private:
  struct Entry {
    std::string value;
    ConfigSource source = ConfigSource::defaults;
    std::string help;
  };

  const Entry& entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw Error("undeclared config key: " + key);
    return it->second;
  }

  void set(const std::string& key, std::string value, ConfigSource src) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(key, "unknown setting");
    if (static_cast<int>(src) < static_cast<int>(it->second.source)) return;
    it->second.value = std::move(value);
    it->second.source = src;
  }

  static std::string scalar_text(const std::string& key, const jsonu::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return v.dump();
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_array()) {
      std::string out;
      for (const auto& e : v) {
        if (!out.empty()) out += ',';
        out += scalar_text(key, e);
      }
      return out;
    }
    throw ConfigError(key, "unsupported value type in config file");
  }

  std::string section_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace hpcs
