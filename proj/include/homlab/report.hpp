#pragma once

// Records, named checks and their CSV / JSON serializations.

#include <cstdint>
#include <cstdio>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "homlab/errors.hpp"

#ifndef HOMLAB_VERSION
#define HOMLAB_VERSION "0.1.0+unknown"
#endif

namespace homlab {

inline constexpr const char* version() { return HOMLAB_VERSION; }

using Cell = std::variant<std::string, std::int64_t, double>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != header.size()) throw Error("record width does not match the header");
    rows.push_back(std::move(row));
  }
  bool operator==(const Table&) const = default;
};

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
  bool operator==(const Check&) const = default;
};

struct RunResult {
  std::string kind;
  std::string name;
  int criterion = 0;  // 0 when the config is not a verify config
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  Table table;
  std::vector<Check> checks;

  bool pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
  void check(std::string name, bool ok, std::string detail = {}) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  }
  bool operator==(const RunResult&) const = default;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Compact form for labels.
inline std::string short_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string format_cell(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  return format_real(std::get<double>(c));
}

/// Fixed header line then one line per record; reals with 17 significant digits.
inline std::string emit_csv(const Table& t) {
  if (t.rows.empty()) throw Error("no records to emit");
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + t.header[i];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_cell(row[i]);
    }
    out += '\n';
  }
  return out;
}

inline void to_json(nlohmann::json& j, const Cell& c) {
  std::visit([&](const auto& v) { j = v; }, c);
}
inline void from_json(const nlohmann::json& j, Cell& c) {
  if (j.is_string()) c = j.get<std::string>();
  else if (j.is_number_integer()) c = j.get<std::int64_t>();
  else if (j.is_number()) c = j.get<double>();
  else throw Error("record cell must be a string or a number");
}

inline void to_json(nlohmann::json& j, const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& c : row) {
      nlohmann::json v;
      to_json(v, c);
      r.push_back(std::move(v));
    }
    rows.push_back(std::move(r));
  }
  j = {{"header", t.header}, {"rows", std::move(rows)}};
}
inline void from_json(const nlohmann::json& j, Table& t) {
  j.at("header").get_to(t.header);
  t.rows.clear();
  for (const auto& r : j.at("rows")) {
    std::vector<Cell> row;
    for (const auto& v : r) {
      Cell c;
      from_json(v, c);
      row.push_back(std::move(c));
    }
    t.rows.push_back(std::move(row));
  }
}

inline void to_json(nlohmann::json& j, const Check& c) {
  j = {{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}};
}
inline void from_json(const nlohmann::json& j, Check& c) {
  j.at("name").get_to(c.name);
  j.at("pass").get_to(c.pass);
  j.at("detail").get_to(c.detail);
}

inline void to_json(nlohmann::json& j, const RunResult& r) {
  j = {{"version", version()}, {"kind", r.kind},     {"name", r.name},     {"criterion", r.criterion},
       {"seed", r.seed},       {"config", r.config}, {"metrics", r.metrics}, {"records", r.table},
       {"checks", r.checks},   {"pass", r.pass()}};
}
inline void from_json(const nlohmann::json& j, RunResult& r) {
  j.at("kind").get_to(r.kind);
  j.at("name").get_to(r.name);
  j.at("criterion").get_to(r.criterion);
  j.at("seed").get_to(r.seed);
  r.config = j.at("config");
  r.metrics = j.at("metrics");
  j.at("records").get_to(r.table);
  j.at("checks").get_to(r.checks);
}

/// JSON summary: config echo, version, metrics, records and checks.
inline std::string emit_json(const RunResult& r) {
  if (r.table.rows.empty()) throw Error("no records to emit");
  return nlohmann::json(r).dump(2) + "\n";
}

inline RunResult parse_json(const std::string& text) { return nlohmann::json::parse(text).get<RunResult>(); }

}  // namespace homlab
