#pragma once

// Plain-text key/value configuration (a TOML subset):
//
//   # comment
//   seed = 7
//   [train]
//   joint_epochs = 300        -> key "train.joint_epochs"
//   routing = "ecmp"
//
// Values are kept as strings and converted on access.

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tomodiff/csv.hpp"
#include "tomodiff/error.hpp"

namespace tomodiff::config {

class Config {
 public:
  Config() = default;

  static Config Parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = text.find('\n', pos);
      std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      pos = end == std::string::npos ? text.size() + 1 : end + 1;
      ++line_no;
      if (const auto hash = FindComment(line); hash != std::string::npos) line.erase(hash);
      const std::string trimmed(csv::Trim(line));
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad section header");
        section = std::string(csv::Trim(std::string_view(trimmed).substr(1, trimmed.size() - 2)));
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key(csv::Trim(std::string_view(trimmed).substr(0, eq)));
      std::string value(csv::Trim(std::string_view(trimmed).substr(eq + 1)));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      c.Set(section.empty() ? key : section + "." + key, value);
    }
    return c;
  }

  static Config Load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Parse(text, path);
  }

  void Set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Applies a `key=value` override.
  void Override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    Set(std::string(csv::Trim(assignment.substr(0, eq))), std::string(csv::Trim(assignment.substr(eq + 1))));
  }

  void Merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool Has(const std::string& key) const { return values_.contains(key); }

  std::string String(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string RequireString(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  double Double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto v = csv::ParseDouble(it->second);
    if (!v) throw ConfigError("key '" + key + "' is not a number: '" + it->second + "'");
    return *v;
  }

  std::int64_t Int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(it->second.c_str(), &end, 10);
    if (it->second.empty() || *end != '\0' || errno == ERANGE) {
      throw ConfigError("key '" + key + "' is not an integer: '" + it->second + "'");
    }
    return v;
  }

  std::uint64_t Uint(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = Int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
  }

  bool Bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key '" + key + "' is not a boolean: '" + it->second + "'");
  }

  // Rejects keys outside `allowed`, so typos fail loudly.
  void RequireKnown(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_) {
      if (!allowed.contains(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::size_t FindComment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return i;
    }
    return std::string::npos;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace tomodiff::config
