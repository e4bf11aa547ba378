#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pipe/dataset_io.hpp"
#include "pipe/error.hpp"

// Flat key=value configuration text. '#' starts a comment; blank lines are
// ignored; list values are comma separated.

namespace riskpipe {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParseFailure(ErrorKind::ConfigError, line_no, "expected key=value, got '" + line + "'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseFailure(ErrorKind::ConfigError, line_no, "empty key");
      kv.set(key, value);
    }
    return kv;
  }

  static KeyValues parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::ConfigError, "cannot open config '" + path + "'");
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Values read through the typed getters are marked as used; anything left
  // over at the end is an unknown key.
  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0.0;
    if (!parse_double(it->second, v)) bad(key, it->second, "a number");
    return v;
  }

  long long get_int(const std::string& key, long long fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) bad(key, s, "an integer");
    return v;
  }

  unsigned long long get_u64(const std::string& key, unsigned long long fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    unsigned long long v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) bad(key, s, "an unsigned integer");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    bad(key, s, "a boolean");
    return false;
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    if (it->second.empty()) return out;
    for (const auto& tok : split_csv(it->second)) {
      double v = 0.0;
      if (!parse_double(tok, v)) bad(key, it->second, "a list of numbers");
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unknown() const {
    const auto unknown = unused_keys();
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw Error(ErrorKind::ConfigError, msg);
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& value,
                               const std::string& expected) {
    throw Error(ErrorKind::ConfigError, "key '" + key + "' = '" + value + "' is not " + expected);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

inline std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

}  // namespace riskpipe
