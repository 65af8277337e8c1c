#pragma once

// Flat sectioned key-value configuration (INI syntax) with typed getters.
// Every error names the offending key as "section.key".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "homlab/errors.hpp"

namespace homlab {

class Config {
 public:
  static Config from_string(const std::string& text, std::filesystem::path origin = {}) {
    std::istringstream in(text);
    boost::property_tree::ptree pt;
    try {
      boost::property_tree::ini_parser::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
    }
    Config c;
    c.origin_ = std::move(origin);
    for (const auto& [section, body] : pt) {
      if (body.empty()) throw ConfigError(section, "keys must live in a [section]");
      for (const auto& [key, value] : body) c.values_[section + "." + key] = trim(value.data());
    }
    return c;
  }

  static Config from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
  }

  const std::filesystem::path& origin() const { return origin_; }
  std::string stem() const { return origin_.empty() ? "run" : origin_.stem().string(); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has_section(const std::string& section) const {
    const auto it = values_.lower_bound(section + ".");
    return it != values_.end() && it->first.compare(0, section.size() + 1, section + ".") == 0;
  }

  std::string str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(key, "missing required key");
    used_.insert(key);
    return it->second;
  }
  std::string str(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  double real(const std::string& key) const { return parse_real(key, str(key)); }
  double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  std::int64_t integer(const std::string& key) const { return parse_int(key, str(key)); }
  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = str(key);
    try {
      std::size_t pos = 0;
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      const auto v = std::stoull(s, &pos, 0);
      if (pos != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected an unsigned 64-bit integer, got '" + s + "'");
    }
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = str(key);
    if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
    if (s == "false" || s == "no" || s == "0" || s == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + s + "'");
  }

  /// Comma-separated list; ';' separates groups in group lists.
  std::vector<std::string> words(const std::string& key, char sep = ',') const { return split(str(key), sep); }
  std::vector<std::string> words(const std::string& key, const std::vector<std::string>& fallback) const {
    return has(key) ? words(key) : fallback;
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& w : words(key)) out.push_back(parse_real(key, w));
    if (out.empty()) throw ConfigError(key, "must not be empty");
    return out;
  }
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const {
    return has(key) ? reals(key) : fallback;
  }
  std::vector<std::int64_t> integers(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& w : words(key)) out.push_back(parse_int(key, w));
    if (out.empty()) throw ConfigError(key, "must not be empty");
    return out;
  }
  std::vector<std::int64_t> integers(const std::string& key, const std::vector<std::int64_t>& fallback) const {
    return has(key) ? integers(key) : fallback;
  }

  /// Keys present in the file but never read.
  void reject_unused() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
    }
  }

  /// Fully qualified key for a bare library key ("h" -> "grid.h"), when
  /// exactly one present key ends with it.
  std::string qualify(const std::string& key) const {
    if (key.find('.') != std::string::npos || has(key)) return key;
    std::string hit;
    for (const auto& [k, v] : values_) {
      if (k.size() > key.size() && k.compare(k.size() - key.size(), key.size(), key) == 0 &&
          k[k.size() - key.size() - 1] == '.') {
        if (!hit.empty()) return key;
        hit = k;
      }
    }
    return hit.empty() ? key : hit;
  }

  /// {section: {key: value}} with values kept as written.
  nlohmann::json echo() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      j[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
    return j;
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
      cur = trim(cur);
      if (!cur.empty()) out.push_back(cur);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::filesystem::path origin_;

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }
  static double parse_real(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      // fractions such as 1/16 are allowed
      const auto slash = s.find('/');
      if (slash != std::string::npos) {
        const double a = parse_real(key, trim(s.substr(0, slash)));
        const double b = parse_real(key, trim(s.substr(slash + 1)));
        if (b != 0.0) return a / b;
      }
      throw ConfigError(key, "expected a number, got '" + s + "'");
    }
  }
  static std::int64_t parse_int(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected an integer, got '" + s + "'");
    }
  }
};

}  // namespace homlab
