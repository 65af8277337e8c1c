#pragma once

// Acceptance criteria: titles, runtime budgets, pinned tolerances and the
// checks every criterion's configs must report.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "homlab/config.hpp"
#include "homlab/experiments.hpp"
#include "homlab/report.hpp"

namespace homlab {

struct Criterion {
  int id = 0;
  std::string title;
  double budget_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> pins;  // applied only when the section is present
  std::vector<std::string> required;                      // check-name prefixes
};

inline const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "constant-coefficient fixed point", 120, {{"expect.exact", "true"}, {"expect.abs_tol", "0.01"}}, {"exact["}},
      {2, "1D harmonic mean", 300, {{"expect.fbar", "4/3"}, {"expect.rel_tol", "0.03"}, {"expect.oracle", "periodic_cell"}},
       {"oracle[", "target[", "against_oracle["}},
      {3, "method agreement", 600, {{"expect.agreement", "true"}, {"effective.method", "both"}}, {"agreement["}},
      {4, "comparison principle", 120, {{"solve.pairs", "100"}, {"solve.slack", "1e-12"}}, {"comparison["}},
      {5, "obstacle invariants", 300, {{"obstacle.nesting", "true"}},
       {"sign_constraints", "ordering", "ell_monotonicity", "nesting"}},
      {6, "homogenization decay", 1800,
       {{"experiment.n_env", "32"}, {"rate.eps_list", "1/4, 1/8, 1/16, 1/32"}, {"rate.stderr_factor", "2"}},
       {"median_decreasing", "q90_decreasing"}},
      {7, "corrector decay", 900, {{"corrector.floor_factor", "0.5"}}, {"median_nonincreasing[", "floor["}},
      {8, "moment structure", 1800, {{"experiment.n_env", "64"}}, {"monotonicity", "product_decay", "variance_decay["}},
      {9, "ergodic averages", 600,
       {{"ergodic.drift_max", "0.1"},
        {"ergodic.vitali_instances", "500"},
        {"ergodic.vitali_dims", "1, 2, 3"},
        {"ergodic.process", "contact_measure"},
        {"ergodic.sequence", "parabolic"}},
       {"drift", "maximal[", "vitali[d=1]", "vitali[d=2]", "vitali[d=3]"}},
      {10, "regularity operators", 120, {}, {"closed_form_oracles", "semiconvexity", "sawtooth_negative_control["}},
      {11, "determinism", 300, {{"determinism.threads", "1, 8"}, {"determinism.repeats", "2"}}, {"byte_identical"}},
  };
  return all;
}

inline const Criterion* find_criterion(int id) {
  for (const auto& c : criteria()) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

/// Overwrites the pinned keys whose section the config uses.
inline void apply_pins(const Criterion& c, Config& cfg) {
  for (const auto& [key, value] : c.pins) {
    const std::string section = key.substr(0, key.find('.'));
    if (section == "experiment" || cfg.has_section(section)) cfg.set(key, value);
  }
}

/// Required checks missing from a result.
inline std::vector<std::string> missing_checks(const Criterion& c, const RunResult& r) {
  std::vector<std::string> out;
  for (const auto& prefix : c.required) {
    bool found = false;
    for (const auto& k : r.checks) found = found || k.name.rfind(prefix, 0) == 0;
    if (!found) out.push_back(prefix);
  }
  return out;
}

struct Verdict {
  Outcome outcome;
  int criterion = 0;
  std::vector<std::string> missing;
  bool pass() const { return outcome.code == exit_ok && missing.empty(); }
};

/// Runs one verify config with its criterion's pins applied.
inline Verdict verify_config(const std::filesystem::path& path, const std::filesystem::path& out_dir = {}) {
  Verdict v;
  const Criterion* crit = nullptr;
  try {
    v.criterion = config_criterion(path);
    crit = find_criterion(v.criterion);
  } catch (const ConfigError& e) {
    v.outcome.path = path;
    v.outcome.code = exit_config;
    v.outcome.message = std::string("config error: ") + e.what();
    return v;
  }
  if (!crit) {
    v.outcome.path = path;
    v.outcome.code = exit_config;
    v.outcome.message = "config error: experiment.criterion: must name a criterion between 1 and 11";
    return v;
  }
  v.outcome = run_config(path, std::nullopt, out_dir, [&](Config& c) { apply_pins(*crit, c); });
  if (v.outcome.code != exit_config) v.missing = missing_checks(*crit, v.outcome.result);
  return v;
}

}  // namespace homlab
