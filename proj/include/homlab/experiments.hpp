#pragma once

// Config-driven experiments. Each runner reads and validates every key it
// needs before computing, then returns records and named checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "homlab/config.hpp"
#include "homlab/ergodic.hpp"
#include "homlab/homogenize.hpp"
#include "homlab/moments.hpp"
#include "homlab/obstacle.hpp"
#include "homlab/parallel.hpp"
#include "homlab/regularity.hpp"
#include "homlab/report.hpp"
#include "homlab/solver.hpp"

namespace homlab {

namespace cfgparse {

inline EnvSpec environment(const Config& c) {
  EnvSpec e;
  e.kind = env_kind_from_string(c.str("environment.kind", "constant"));
  e.d = static_cast<int>(c.integer("environment.d", 1));
  e.value = c.real("environment.value", e.value);
  e.table = c.reals("environment.table", e.table);
  e.period_x = static_cast<int>(c.integer("environment.period_x", e.period_x));
  e.period_t = static_cast<int>(c.integer("environment.period_t", e.period_t));
  e.low = c.real("environment.low", e.low);
  e.high = c.real("environment.high", e.high);
  e.p = c.real("environment.p", e.p);
  e.cell_x = c.real("environment.cell_x", e.cell_x);
  e.cell_t = c.real("environment.cell_t", e.cell_t);
  e.smoothing = c.real("environment.smoothing", e.smoothing);
  e.validate();
  return e;
}

struct NamedOperator {
  std::string name;
  OperatorSpec op;
};

/// operator.kind is a list of pucci_plus | pucci_minus | linear_trace |
/// scalar_modulated; the modulated kind multiplies operator.base.
inline std::vector<NamedOperator> operators(const Config& c) {
  const double lambda = c.real("operator.lambda", 1.0);
  const double Lambda = c.real("operator.Lambda", 1.0);
  const std::string base = c.str("operator.base", "pucci_minus");
  std::vector<NamedOperator> out;
  for (const auto& k : c.words("operator.kind", std::vector<std::string>{"linear_trace"})) {
    OperatorSpec s;
    s.lambda = lambda;
    s.Lambda = Lambda;
    if (k == "scalar_modulated") {
      s.base = base_kind_from_string(base);
      s.modulated = true;
    } else {
      try {
        s.base = base_kind_from_string(k);
      } catch (const ConfigError&) {
        throw ConfigError("operator.kind", "unknown operator kind '" + k + "'");
      }
    }
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("operator.Lambda", e.what());
    }
    out.push_back({k == "scalar_modulated" ? "scalar_modulated_" + to_string(s.base) : k, s});
  }
  require(!out.empty(), "operator.kind", "must not be empty");
  return out;
}

struct NamedMatrix {
  std::string label;
  SymMatrix M;
};

/// ';'-separated matrices: "c" (c times the identity), "I", "-I", or
/// "m00 m01 m11" in d = 2.
inline std::vector<NamedMatrix> matrices(const Config& c, const std::string& key, int d) {
  std::vector<NamedMatrix> out;
  for (const auto& item : Config::split(c.str(key), ';')) {
    std::vector<std::string> tok;
    for (const auto& w : Config::split(item, ' ')) {
      for (const auto& v : Config::split(w, ',')) tok.push_back(v);
    }
    auto num = [&](const std::string& s) {
      Config one = Config::from_string("[m]\nv = " + s + "\n");
      try {
        return one.real("m.v");
      } catch (const ConfigError&) {
        throw ConfigError(key, "bad matrix entry '" + s + "'");
      }
    };
    double a = 0.0, b = 0.0, e = 0.0;
    if (tok.size() == 1) {
      const double s = tok[0] == "I" ? 1.0 : tok[0] == "-I" ? -1.0 : num(tok[0]);
      a = e = s;
    } else if (tok.size() == 3 && d == 2) {
      a = num(tok[0]);
      b = num(tok[1]);
      e = num(tok[2]);
    } else {
      throw ConfigError(key, "matrix '" + item + "' must be one number or three entries in d = 2");
    }
    out.push_back({item, d == 1 ? SymMatrix::scalar(a) : SymMatrix::of(a, b, e)});
  }
  require(!out.empty(), key, "must not be empty");
  return out;
}

inline SymMatrix matrix(const Config& c, const std::string& key, int d) {
  const auto ms = matrices(c, key, d);
  require(ms.size() == 1, key, "expects a single matrix");
  return ms.front().M;
}

inline std::vector<int> ints(const Config& c, const std::string& key, std::vector<int> fallback = {}) {
  if (!c.has(key)) return fallback;
  std::vector<int> out;
  for (auto v : c.integers(key)) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace cfgparse

namespace detail {

inline std::string label(const SymMatrix& M) {
  if (M.dim() == 1) return format_real(M(0, 0));
  return format_real(M(0, 0)) + " " + format_real(M(0, 1)) + " " + format_real(M(1, 1));
}

inline std::string sides_label(const std::vector<std::int64_t>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

/// Critical l = -Fbar(M) from the corrector-sign estimator, configured by
/// the [critical] section.
struct CriticalOptions {
  EstimatorOptions opt;
  bool wanted = false;
  double given = 0.0;
};

inline CriticalOptions read_ell(const Config& c, const std::string& key, int n_env) {
  CriticalOptions r;
  const std::string s = c.str(key);
  if (s == "critical") {
    r.wanted = true;
    r.opt.R = c.real("critical.R", 9.0);
    r.opt.h = c.real("critical.h", 0.125);
    r.opt.tol = c.real("critical.tol", 1e-2);
    r.opt.n_env = static_cast<int>(c.integer("critical.n_env", n_env));
    r.opt.validate();
  } else {
    r.given = c.real(key);
  }
  return r;
}

inline double resolve_ell(const CriticalOptions& r, const OperatorSpec& op, const EnvSpec& env, const SymMatrix& M,
                          std::uint64_t seed, nlohmann::json& metrics) {
  if (!r.wanted) return r.given;
  const auto e = estimate_fbar(op, env, M, Method::corrector_zero, r.opt, derive_seed(seed, 10, 0));
  metrics["critical_fbar"] = e.fbar;
  metrics["critical_width"] = e.width();
  return -e.fbar;
}

/// Sample for solvers that take a single realization.
inline EnvSample single_env(const EnvSpec& e, std::uint64_t seed) { return sample_env(e, derive_seed(seed, 8, 0)); }

}  // namespace detail

// ---------------------------------------------------------------------------

inline void run_solve(const Config& c, RunResult& r, int n_env) {
  (void)n_env;
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  const int d = env_spec.d;
  const std::string dom = c.str("solve.domain", "cube");
  require(dom == "cube" || dom == "cylinder", "solve.domain", "must be cube or cylinder");
  const double radius = c.real("solve.radius", 1.0);
  const double h = c.real("grid.h", 1.0 / 16);
  const double cfl = c.real("grid.cfl", 0.9);
  const bool explicit_dt = c.has("grid.dt");
  const double dt = c.real("grid.dt", 0.0);
  SolveConfig base;
  base.cfl = cfl;
  base.eps = c.real("solve.eps", 0.0);
  base.ell = c.real("solve.ell", 0.0);
  const std::string boundary = c.str("solve.boundary", "smooth");
  require(boundary == "zero" || boundary == "smooth", "solve.boundary", "must be zero or smooth");
  const int pairs = static_cast<int>(c.integer("solve.pairs", 0));
  require(pairs >= 0, "solve.pairs", "must be nonnegative");
  const double slack = c.real("solve.slack", 1e-12);
  c.reject_unused();
  base.validate();

  SpaceTimePoint centre;
  centre.x.assign(static_cast<std::size_t>(d), 0.0);
  const auto D = make_domain(dom == "cube" ? DomainKind::cube : DomainKind::cylinder, centre, radius);
  const EnvSample env = detail::single_env(env_spec, r.seed);
  if (boundary == "smooth") base.boundary = detail::random_smooth(derive_seed(r.seed, 8, 1), 1.0, false);
  r.table.header = {"operator", "d", "h", "dt", "steps", "sup_norm", "pairs", "worst_violation"};
  for (const auto& [name, op] : ops) {
    const auto [hx, dtx] = resolution_limits(op, &env, base.eps);
    const GridSpec g = explicit_dt ? GridSpec::make(D, std::min(h, hx), dt)
                                   : make_grid(D, std::min(h, hx), op, &env, cfl, dtx);
    const auto u = solve_parabolic(op, &env, base, g);
    ComparisonReport cmp;
    if (pairs > 0) {
      cmp = comparison_check(op, &env, base, g, pairs, derive_seed(r.seed, 8, 2), slack);
      r.check("comparison[" + name + "]", cmp.pass,
              std::to_string(cmp.pairs) + " pairs, worst violation " + format_real(cmp.worst_violation));
    }
    r.table.add({name, std::int64_t{d}, g.h, g.dt, std::int64_t{g.nt()}, sup_norm(u), std::int64_t{cmp.pairs},
                 cmp.worst_violation});
  }
}

inline void run_effective(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  const auto Ms = cfgparse::matrices(c, "effective.M", env_spec.d);
  std::vector<Method> methods;
  for (const auto& m : c.words("effective.method", std::vector<std::string>{"both"})) {
    if (m == "both") {
      methods.push_back(Method::contact_dichotomy);
      methods.push_back(Method::corrector_zero);
    } else {
      methods.push_back(method_from_string(m));
    }
  }
  EstimatorOptions opt;
  opt.R = c.real("effective.R", opt.R);
  opt.h = c.real("effective.h", opt.h);
  opt.cfl = c.real("effective.cfl", opt.cfl);
  opt.n_env = n_env;
  opt.predicate = predicate_from_string(c.str("effective.predicate", to_string(opt.predicate)));
  opt.fraction_threshold = c.real("effective.fraction_threshold", opt.fraction_threshold);
  opt.tol = c.real("effective.tol", opt.tol);
  opt.budget = c.integer("effective.budget", opt.budget);
  opt.validate();
  const bool exact = c.flag("expect.exact", false);
  const double abs_tol = c.real("expect.abs_tol", 1e-2);
  const bool has_target = c.has("expect.fbar");
  const double target = c.real("expect.fbar", 0.0);
  const double rel_tol = c.real("expect.rel_tol", 0.03);
  const std::string oracle = c.str("expect.oracle", "none");
  require(oracle == "none" || oracle == "periodic_cell", "expect.oracle", "must be none or periodic_cell");
  const int oracle_nodes = static_cast<int>(c.integer("expect.oracle_nodes", 64));
  const double oracle_tol = c.real("expect.oracle_tol", 1e-3);
  const bool agreement = c.flag("expect.agreement", false);
  if (exact) require(env_spec.is_constant(), "expect.exact", "needs a constant environment");
  c.reject_unused();

  r.table.header = {"operator", "M", "method", "fbar", "ell_lo", "ell_hi", "width", "resolution", "n_env", "R", "solves"};
  nlohmann::json est_json = nlohmann::json::array();
  for (const auto& [name, op] : ops) {
    for (const auto& [mlabel, M] : Ms) {
      double oracle_value = NAN;
      if (oracle == "periodic_cell") {
        require(op.base == BaseKind::linear_trace && op.modulated, "expect.oracle",
                "the periodic cell oracle covers the modulated linear_trace operator");
        oracle_value = periodic_cell_rate(env_spec, M(0, 0), oracle_nodes);
        r.metrics["oracle_fbar"] = oracle_value;
        if (has_target) {
          r.check("oracle[" + mlabel + "]", std::abs(oracle_value - target) <= oracle_tol * std::abs(target),
                  "oracle " + format_real(oracle_value) + " against " + format_real(target));
        }
      }
      std::vector<EffectiveEstimate> ests;
      for (Method m : methods) {
        const auto e = estimate_fbar(op, env_spec, M, m, opt, r.seed);
        ests.push_back(e);
        r.table.add({name, mlabel, to_string(m), e.fbar, e.ell_lo, e.ell_hi, e.width(), e.resolution,
                     std::int64_t{e.n_env}, e.scale, std::int64_t{e.solves}});
        const std::string tag = name + "," + mlabel + "," + to_string(m);
        if (exact) {
          const double F = op.base_value(M) * (op.modulated ? env_spec.value : 1.0);
          r.check("exact[" + tag + "]", std::abs(e.fbar - F) <= abs_tol * (1.0 + std::abs(F)),
                  "fbar " + format_real(e.fbar) + ", F(M) " + format_real(F));
        }
        if (has_target) {
          r.check("target[" + tag + "]", std::abs(e.fbar - target) <= rel_tol * std::abs(target),
                  "fbar " + format_real(e.fbar) + " against " + format_real(target));
        }
        if (std::isfinite(oracle_value)) {
          r.check("against_oracle[" + tag + "]", std::abs(e.fbar - oracle_value) <= rel_tol * std::abs(oracle_value),
                  "fbar " + format_real(e.fbar) + " against oracle " + format_real(oracle_value));
        }
      }
      if (agreement) {
        require(ests.size() == 2, "effective.method", "agreement needs both methods");
        const auto a = method_agreement(ests[0], ests[1]);
        r.check("agreement[" + name + "," + mlabel + "]", a.pass,
                "difference " + format_real(a.difference) + ", allowed " + format_real(a.allowed));
        est_json.push_back({{"operator", name}, {"M", mlabel}, {"difference", a.difference}, {"allowed", a.allowed}});
      }
    }
  }
  if (agreement) r.metrics["agreement"] = est_json;
}

inline void run_corrector(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  const SymMatrix M = cfgparse::matrix(c, "corrector.M", env_spec.d);
  const auto crit = detail::read_ell(c, "corrector.ell", n_env);
  const auto offsets = c.reals("corrector.offsets", {0.0});
  const auto eps_list = c.reals("corrector.eps_list");
  const double h = c.real("corrector.h", 0.125);
  const double cfl = c.real("corrector.cfl", 0.9);
  const double C_hat = c.real("corrector.C_hat", 1.0);
  const double c_hat = c.real("corrector.c_hat", 1.0);
  const double floor_factor = c.real("corrector.floor_factor", 0.5);
  detail::check_ladder(eps_list);
  c.reject_unused();

  r.table.header = {"operator", "offset", "ell", "eps", "median", "q90", "se_median", "se_q90", "exceed_fraction", "h", "dt", "n"};
  for (const auto& [name, op] : ops) {
    const double ell0 = detail::resolve_ell(crit, op, env_spec, M, r.seed, r.metrics);
    const double beta = barrier_beta(op, env_spec, env_spec.d);
    for (double off : offsets) {
      const auto rep = corrector_decay(op, env_spec, M, ell0 + off, eps_list, n_env, r.seed, h, cfl, C_hat, c_hat);
      double min_median = INFINITY;
      bool nonincreasing = true;
      for (std::size_t i = 0; i < rep.records.size(); ++i) {
        const auto& e = rep.records[i];
        r.table.add({name, off, ell0 + off, e.eps, e.median, e.q90, e.se_median, e.se_q90, e.exceed_fraction, e.h, e.dt,
                     std::int64_t(e.values.size())});
        min_median = std::min(min_median, e.median);
        if (i > 0 && e.median > rep.records[i - 1].median) nonincreasing = false;
      }
      const std::string tag = name + ",offset=" + short_real(off);
      if (off == 0.0) {
        r.check("median_nonincreasing[" + tag + "]", nonincreasing, "slope " + format_real(rep.slope));
      } else {
        const double floor = floor_factor * beta * std::abs(off);
        r.check("floor[" + tag + "]", min_median >= floor,
                "min median " + format_real(min_median) + ", floor " + format_real(floor));
      }
    }
  }
}

inline void run_obstacle(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  const int d = env_spec.d;
  const SymMatrix M = cfgparse::matrix(c, "obstacle.M", d);
  auto ells = c.reals("obstacle.ell_list");
  std::sort(ells.begin(), ells.end());
  const double R = c.real("obstacle.R", 1.0);
  const double h = c.real("obstacle.h", 0.125);
  const double cfl = c.real("obstacle.cfl", 0.9);
  const double eps = c.real("obstacle.eps", 0.0);
  const bool nesting = c.flag("obstacle.nesting", true);
  require(n_env >= 1, "experiment.n_env", "must be positive");
  c.reject_unused();

  r.table.header = {"operator", "env", "ell", "p_above", "p_below", "mass_above", "mass_below", "sign_violations",
                    "order_violations", "monotone_violations", "nesting_compared", "nesting_ambiguous",
                    "nesting_mismatched"};
  const auto K2 = scale_cube(d, R);
  std::int64_t sign = 0, order = 0, mono = 0, mismatched = 0;
  for (const auto& [name, op0] : ops) {
    const OperatorSpec op = op0.shifted(M);
    const auto rows = parallel_map<std::vector<std::vector<Cell>>>(static_cast<std::size_t>(n_env), [&](std::size_t i) {
      const EnvSample env = sample_env(env_spec, derive_seed(r.seed, 11, i));
      const auto [hx, dtx] = resolution_limits(op, &env, eps);
      const GridSpec g = make_grid(K2, std::min(h, hx), op, &env, cfl, dtx);
      std::vector<std::vector<Cell>> out;
      double prev_up = 2.0, prev_dn = -1.0;
      for (double ell : ells) {
        const auto up = solve_obstacle(op, &env, ell, eps, g, Side::above, cfl);
        const auto dn = solve_obstacle(op, &env, ell, eps, g, Side::below, cfl);
        SolveConfig cfg;
        cfg.cfl = cfl;
        cfg.eps = eps;
        cfg.ell = ell;
        const auto w = solve_parabolic(op, &env, cfg, g);
        std::int64_t s_viol = 0, o_viol = 0;
        for (std::size_t j = 0; j < w.slices(); ++j) {
          for (std::size_t k = 0; k < w.slice_size(); ++k) {
            const double a = up.v.at(j, k), b = dn.v.at(j, k), x = w.at(j, k);
            s_viol += a < 0.0 || b > 0.0 || (w.on_boundary(j, k) && (a != 0.0 || b != 0.0));
            o_viol += b > x || x > a;
          }
        }
        const std::int64_t m_viol = (up.fraction > prev_up) + (dn.fraction < prev_dn);
        prev_up = up.fraction;
        prev_dn = dn.fraction;
        const double scale = mass_scale(op0, env_spec, M, ell);
        const double mu = contact_stats(up, op, &env, ell, eps, scale).mass;
        const double md = contact_stats(dn, op, &env, ell, eps, scale).mass;
        std::int64_t cmp = 0, amb = 0, mis = 0;
        if (nesting) {
          const long half = std::max(1L, g.nt() / 2);
          const auto K1 = with_time_window(K2, K2.t_lo, K2.t_lo + static_cast<double>(half) * g.dt);
          for (Side s : {Side::above, Side::below}) {
            const auto n = nesting_check(op, &env, ell, eps, K1, K2, h, s, cfl);
            cmp += static_cast<std::int64_t>(n.compared);
            amb += static_cast<std::int64_t>(n.ambiguous);
            mis += static_cast<std::int64_t>(n.mismatched);
          }
        }
        out.push_back({name, std::int64_t(i), ell, up.fraction, dn.fraction, mu, md, s_viol, o_viol, m_viol, cmp, amb, mis});
      }
      return out;
    });
    for (const auto& block : rows) {
      for (const auto& row : block) {
        sign += std::get<std::int64_t>(row[7]);
        order += std::get<std::int64_t>(row[8]);
        mono += std::get<std::int64_t>(row[9]);
        mismatched += std::get<std::int64_t>(row[12]);
        r.table.add(row);
      }
    }
  }
  r.check("sign_constraints", sign == 0, std::to_string(sign) + " violations");
  r.check("ordering", order == 0, std::to_string(order) + " violations of v_below <= w <= v_above");
  r.check("ell_monotonicity", mono == 0, std::to_string(mono) + " violations");
  if (nesting) r.check("nesting", mismatched == 0, std::to_string(mismatched) + " mismatched nodes");
}

inline void run_rate(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  require(ops.size() == 1, "operator.kind", "the rate experiment takes one operator");
  const OperatorSpec op = ops.front().op;
  const auto eps_list = c.reals("rate.eps_list");
  detail::check_ladder(eps_list);
  const bool given = c.has("rate.fbar_plus") || c.has("rate.fbar_minus");
  double f_plus = c.real("rate.fbar_plus", 0.0), f_minus = c.real("rate.fbar_minus", 0.0);
  if (given) require(c.has("rate.fbar_plus") && c.has("rate.fbar_minus"), "rate.fbar_plus", "give both table values");
  EstimatorOptions opt;
  opt.R = c.real("rate.R", 9.0);
  opt.h = c.real("rate.h", 0.125);
  opt.tol = c.real("rate.tol", 1e-2);
  opt.n_env = static_cast<int>(c.integer("rate.table_n_env", n_env));
  const Method method = method_from_string(c.str("rate.method", "corrector_zero"));
  if (!given) opt.validate();
  const double range = c.real("rate.range", 10.0);
  const long levels = c.integer("rate.levels", 64);
  const double cfl = c.real("rate.cfl", 0.9);
  const double z = c.real("rate.stderr_factor", 2.0);
  c.reject_unused();

  double w_plus = 0.0, w_minus = 0.0;
  if (!given) {
    const auto ep = estimate_fbar(op, env_spec, SymMatrix::scalar(1.0), method, opt, derive_seed(r.seed, 13, 0));
    const auto em = estimate_fbar(op, env_spec, SymMatrix::scalar(-1.0), method, opt, derive_seed(r.seed, 13, 0));
    f_plus = ep.fbar;
    f_minus = em.fbar;
    w_plus = ep.width();
    w_minus = em.width();
  }
  const auto table = homogeneous_table(f_plus, f_minus, range, w_plus, w_minus);
  r.metrics["fbar_plus"] = f_plus;
  r.metrics["fbar_minus"] = f_minus;
  const EnvSample probe = sample_env(env_spec, r.seed);
  const auto [lo, hi] = effective_ellipticity(op, 1, &probe);
  const auto ell = ellipticity_of_fbar(table, lo, hi);
  r.check("fbar_ellipticity", ell.pass,
          "slopes in [" + format_real(ell.min_slope) + ", " + format_real(ell.max_slope) + "]");

  const SpaceTimeFn g = [](std::span<const double> x, double) {
    return std::cos(std::numbers::pi * x[0] / 2.0) + 0.5 * std::sin(std::numbers::pi * x[0]);
  };
  const auto rep = homogenization_experiment(op, env_spec, g, eps_list, table, n_env, r.seed, cfl, levels);
  r.metrics["slope"] = rep.slope;
  r.table.header = {"eps", "median", "q90", "se_median", "se_q90", "h", "dt", "n"};
  bool med = true, q90 = true;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& e = rep.records[i];
    r.table.add({e.eps, e.median, e.q90, e.se_median, e.se_q90, e.h, e.dt, std::int64_t(e.values.size())});
    if (i > 0) {
      const auto& p = rep.records[i - 1];
      med = med && e.median < p.median + z * std::hypot(e.se_median, p.se_median);
      q90 = q90 && e.q90 < p.q90 + z * std::hypot(e.se_q90, p.se_q90);
    }
  }
  r.check("median_decreasing", med, "slope " + format_real(rep.slope));
  r.check("q90_decreasing", q90);
}

inline void run_moments(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  require(ops.size() == 1, "operator.kind", "the moments experiment takes one operator");
  const OperatorSpec op = ops.front().op;
  const SymMatrix M = cfgparse::matrix(c, "moments.M", env_spec.d);
  const auto crit = detail::read_ell(c, "moments.ell", n_env);
  const auto ks = cfgparse::ints(c, "moments.k_list", {1, 2, 3});
  const auto parents = cfgparse::ints(c, "moments.variance_k");
  MomentOptions opt;
  opt.h = c.real("moments.h", opt.h);
  opt.cfl = c.real("moments.cfl", opt.cfl);
  opt.max_k = static_cast<int>(c.integer("moments.max_k", opt.max_k));
  opt.work_budget = c.real("moments.work_budget", opt.work_budget);
  opt.shift = c.reals("moments.shift", {});
  opt.validate(env_spec.d);
  const int variance_n_env = static_cast<int>(c.integer("moments.variance_n_env", n_env));
  const bool inject = c.flag("moments.inject_violation", false);
  c.reject_unused();

  const double ell = detail::resolve_ell(crit, op, env_spec, M, r.seed, r.metrics);
  r.metrics["ell"] = ell;
  auto reps = estimate_moments(op, env_spec, M, ell, ks, n_env, r.seed, opt);
  if (inject && reps.size() >= 2) {
    // negative control: the last scale gets ten times the first scale's second moments
    auto& last = reps.back();
    last.J_above = 10.0 * reps.front().J_above + 1.0;
    last.J_below = 10.0 * reps.front().J_below + 1.0;
    last.J_product = 10.0 * reps.front().J_product + 1.0;
  }
  r.table.header = {"k", "side", "E", "J", "V", "J_product", "n", "stderr_E", "stderr_J"};
  for (const auto& m : reps) {
    r.table.add({std::int64_t{m.k}, "above", m.E_above, m.J_above, m.V_above, m.J_product, std::int64_t{m.n_samples},
                 m.se_E_above, m.se_J_above});
    r.table.add({std::int64_t{m.k}, "below", m.E_below, m.J_below, m.V_below, m.J_product, std::int64_t{m.n_samples},
                 m.se_E_below, m.se_J_below});
  }
  if (reps.size() >= 2) {
    const auto mono = monotonicity_check(reps);
    std::string bad;
    for (std::size_t i = 0; i < mono.above.size(); ++i) {
      const std::string step = std::to_string(reps[i].k) + "->" + std::to_string(reps[i + 1].k);
      if (!mono.above[i]) bad += " above " + step;
      if (!mono.below[i]) bad += " below " + step;
      if (!mono.product[i]) bad += " product " + step;
    }
    r.check("monotonicity", mono.pass, bad.empty() ? "" : "violated:" + bad);
  }
  if (reps.size() >= 3) {
    const auto pd = product_decay(reps);
    r.metrics["product_log_slope"] = pd.log_slope;
    r.check("product_decay", pd.pass,
            pd.identically_zero ? "identically zero" : "log slope " + format_real(pd.log_slope));
  }
  nlohmann::json vj = nlohmann::json::array();
  for (int pk : parents) {
    const auto v = variance_decay_check(op, env_spec, M, ell, pk, variance_n_env,
                                        derive_seed(r.seed, 12, static_cast<std::uint64_t>(pk)), opt);
    vj.push_back({{"parent_k", pk},
                  {"above", {{"lhs", v.above.lhs}, {"lhs_stderr", v.above.lhs_stderr}, {"rhs", v.above.rhs}}},
                  {"below", {{"lhs", v.below.lhs}, {"lhs_stderr", v.below.lhs_stderr}, {"rhs", v.below.rhs}}}});
    r.check("variance_decay[k=" + std::to_string(pk) + "]", v.pass,
            "above " + format_real(v.above.lhs) + " <= " + format_real(v.above.rhs) + ", below " +
                format_real(v.below.lhs) + " <= " + format_real(v.below.rhs));
  }
  if (!parents.empty()) r.metrics["variance_decay"] = vj;
}

inline void run_ergodic(const Config& c, RunResult& r, int n_env) {
  const EnvSpec env_spec = cfgparse::environment(c);
  const std::string process = c.str("ergodic.process", "contact_measure");
  const std::string seq_kind = c.str("ergodic.sequence", process == "contact_measure" ? "parabolic" : "standard");
  std::vector<std::int64_t> sides = c.integers("ergodic.sides");
  SubadditiveProcess proc;
  if (process == "contact_measure") {
    const auto ops = cfgparse::operators(c);
    require(ops.size() == 1, "operator.kind", "the contact process takes one operator");
    const SymMatrix M = cfgparse::matrix(c, "ergodic.M", env_spec.d);
    const double ell = c.real("ergodic.ell");
    proc = contact_measure_process(ops.front().op, M, ell, c.real("ergodic.h", 0.125), c.real("ergodic.cfl", 0.9));
  } else if (process == "cell_sum") {
    proc = cell_sum_process(env_spec);
  } else if (process == "volume") {
    proc = volume_process();
  } else {
    throw ConfigError("ergodic.process", "must be contact_measure, cell_sum or volume");
  }
  CubeSequence seq;
  if (seq_kind == "parabolic") seq = CubeSequence::parabolic(env_spec.d, sides);
  else if (seq_kind == "standard") seq = CubeSequence::standard(env_spec.d, sides);
  else throw ConfigError("ergodic.sequence", "must be parabolic or standard");
  const double drift_max = c.real("ergodic.drift_max", 0.10);
  const int vitali = static_cast<int>(c.integer("ergodic.vitali_instances", 0));
  const auto dims = cfgparse::ints(c, "ergodic.vitali_dims", {1, 2, 3});
  const auto alphas = c.reals("ergodic.alpha", {});
  const int splits = static_cast<int>(c.integer("ergodic.subadditivity_splits", 0));
  c.reject_unused();

  const auto rep = ergodic_average(proc, seq, env_spec, n_env, r.seed);
  r.table.header = {"stage", "sides", "volume", "mean", "variance", "stderr"};
  for (std::size_t j = 0; j < rep.stages.size(); ++j) {
    const auto& s = rep.stages[j];
    r.table.add({std::int64_t(j), detail::sides_label(seq.sides[j]), s.volume, s.mean, s.variance, s.stderr_});
  }
  r.metrics["pooled_drift"] = rep.pooled_drift;
  r.metrics["variance_shrinks"] = rep.variance_shrinks;
  r.check("drift", rep.pooled_drift <= drift_max,
          "last-two-stage drift " + format_real(rep.pooled_drift) + " against " + format_real(drift_max));
  for (double a : alphas) {
    const auto m = maximal_inequality_check(rep, seq.lattice_dim(), a);
    r.check("maximal[alpha=" + short_real(a) + "]", m.pass,
            "P " + format_real(m.p_exceed) + " <= " + format_real(m.bound) + " + 3 x " + format_real(m.stderr_));
  }
  if (vitali > 0) {
    for (int d : dims) {
      const auto s = covering_stress(d, vitali, r.seed);
      r.check("vitali[d=" + std::to_string(d) + "]", s.failures == 0,
              std::to_string(s.failures) + " failures in " + std::to_string(s.instances));
    }
  }
  if (splits > 0) {
    const auto s = subadditivity_check(proc, seq.box(seq.stages() - 1), env_spec, splits, derive_seed(r.seed, 14, 0));
    r.check("subadditivity", s.pass, "worst excess " + format_real(s.worst));
  }
}

inline void run_regularity(const Config& c, RunResult& r, int n_env) {
  (void)n_env;
  const EnvSpec env_spec = cfgparse::environment(c);
  const auto ops = cfgparse::operators(c);
  const int d = env_spec.d;
  const auto thetas = c.reals("regularity.theta", {0.05, 0.1, 0.5});
  for (double t : thetas) require(t > 0.0, "regularity.theta", "must be positive");
  const double h = c.real("regularity.h", 1.0 / 32);
  const double slope = c.real("regularity.slope", 0.7);
  const SymMatrix M = cfgparse::matrix(c, "regularity.M", d);
  const auto ells = c.reals("regularity.ell_list", {});
  const double R = c.real("regularity.R", 1.0);
  const double oh = c.real("regularity.obstacle_h", 0.125);
  const double theta_mass = c.real("regularity.theta_mass", 1e-3);
  c.reject_unused();

  std::vector<double> lo(static_cast<std::size_t>(d), -1.0), hi(static_cast<std::size_t>(d), 1.0);
  const GridSpec g = GridSpec::make(make_box(lo, hi, 0.0, 0.1), h, 0.05);
  r.table.header = {"field", "operation", "theta", "max_error", "allowed", "semiconvex_worst", "bound", "violations"};
  auto add = [&](const std::string& field, const std::string& opname, double theta, double err, double allowed,
                 const SemiconvexityReport& s) {
    r.table.add({field, opname, theta, err, allowed, s.worst, s.bound, std::int64_t(s.violations)});
  };
  bool oracles = true, semiconvex = true, ordering = true, displacement = true;
  for (double theta : thetas) {
    const double allowed = g.h * g.h / theta;
    // linear field: maximizer x + theta a e_1 must stay on the grid
    const auto lin = SpaceTimeField::from_function(g, [&](std::span<const double> x, double) { return slope * x[0]; });
    for (bool sup : {true, false}) {
      const auto cv = sup ? sup_convolution_x(lin, theta) : inf_convolution_x(lin, theta);
      double err = 0.0;
      for (std::size_t i = 0; i < lin.slice_size(); ++i) {
        const auto p = lin.point(0, i);
        const double xs = p.x[0] + (sup ? 1.0 : -1.0) * theta * slope;
        if (xs > 1.0 - g.h || xs < -1.0 + g.h) continue;
        bool inner = true;
        for (int a = 1; a < d; ++a) inner = inner && std::abs(p.x[static_cast<std::size_t>(a)]) < 1.0;
        if (!inner) continue;
        const double exact = slope * p.x[0] + (sup ? 0.5 : -0.5) * theta * slope * slope;
        err = std::max(err, std::abs(cv.field.at(0, i) - exact));
      }
      const auto s = semiconvexity_check(cv);
      add("linear", sup ? "sup" : "inf", theta, err, allowed, s);
      oracles = oracles && err <= allowed;
      semiconvex = semiconvex && s.pass;
    }
    // quadratic: -|x|^2/2 under sup, +|x|^2/2 under inf
    for (bool sup : {true, false}) {
      const double sg = sup ? -1.0 : 1.0;
      const auto q = SpaceTimeField::from_function(g, [&](std::span<const double> x, double) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return sg * s / 2.0;
      });
      const auto cv = sup ? sup_convolution_x(q, theta) : inf_convolution_x(q, theta);
      double err = 0.0;
      for (std::size_t i = 0; i < q.slice_size(); ++i) {
        const auto p = q.point(0, i);
        double s = 0.0;
        for (double v : p.x) s += v * v;
        err = std::max(err, std::abs(cv.field.at(0, i) - sg * s / (2.0 * (1.0 + theta))));
      }
      const auto sc = semiconvexity_check(cv);
      add("quadratic", sup ? "sup" : "inf", theta, err, allowed, sc);
      oracles = oracles && err <= allowed;
      semiconvex = semiconvex && sc.pass;
    }
    // sawtooth: fails raw, passes once convolved
    const auto saw = SpaceTimeField::from_function(g, [&](std::span<const double> x, double) {
      long s = 0;
      for (double v : x) s += std::lround((v + 1.0) / g.h);
      return s % 2 == 0 ? 0.0 : 1.0;
    });
    const auto raw = semiconvexity_check(saw, theta);
    add("sawtooth", "none", theta, 0.0, 0.0, raw);
    r.check("sawtooth_negative_control[theta=" + short_real(theta) + "]", !raw.pass,
            std::to_string(raw.violations) + " violations");
    const auto sc = semiconvexity_check(sup_convolution_x(saw, theta));
    add("sawtooth", "sup", theta, 0.0, 0.0, sc);
    semiconvex = semiconvex && sc.pass;
  }
  const EnvSample env = detail::single_env(env_spec, r.seed);
  nlohmann::json sep = nlohmann::json::array();
  for (const auto& [name, op0] : ops) {
    const OperatorSpec op = op0.shifted(M);
    const auto [hx, dtx] = resolution_limits(op, &env, 0.0);
    const GridSpec og = make_grid(scale_cube(d, R), std::min(oh, hx), op, &env, 0.9, dtx);
    for (double ell : ells) {
      for (Side side : {Side::above, Side::below}) {
        const auto sol = solve_obstacle(op, &env, ell, 0.0, og, side);
        for (double theta : thetas) {
          for (bool sup : {true, false}) {
            const auto cv = sup ? sup_convolution_x(sol.v, theta) : inf_convolution_x(sol.v, theta);
            const auto s = semiconvexity_check(cv);
            add("obstacle_" + to_string(side) + "[" + name + ",ell=" + short_real(ell) + "]", sup ? "sup" : "inf",
                theta, 0.0, 0.0, s);
            semiconvex = semiconvex && s.pass;
            for (std::size_t k = 0; k < cv.field.values.size(); ++k) {
              ordering = ordering && (sup ? cv.field.values[k] >= sol.v.values[k] : cv.field.values[k] <= sol.v.values[k]);
            }
            displacement = displacement && displacement_check(sol.v, cv).pass;
          }
        }
      }
      const auto s = separation_check(op, &env, ell, 0.0, og, theta_mass);
      sep.push_back({{"operator", name},
                     {"ell", ell},
                     {"min_h_interior", s.min_h_interior},
                     {"mass_above", s.mass_above},
                     {"mass_below", s.mass_below},
                     {"positivity_asserted", s.positivity_asserted}});
      r.check("separation[" + name + ",ell=" + short_real(ell) + "]", s.pass,
              "min h " + format_real(s.min_h_interior) + (s.positivity_asserted ? ", positivity asserted" : ""));
    }
  }
  if (!sep.empty()) r.metrics["separation"] = sep;
  r.check("closed_form_oracles", oracles, "linear and quadratic within h^2/theta");
  r.check("semiconvexity", semiconvex);
  r.check("ordering", ordering);
  r.check("displacement", displacement);
}

inline RunResult run_experiment(const Config& cfg);

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void run_determinism(const Config& c, RunResult& r, int n_env) {
  (void)n_env;
  const std::string target = c.str("determinism.target");
  const auto threads = c.integers("determinism.threads", {1, 8});
  const int repeats = static_cast<int>(c.integer("determinism.repeats", 2));
  require(repeats >= 1, "determinism.repeats", "must be positive");
  for (auto t : threads) require(t >= 1, "determinism.threads", "must be positive");
  c.reject_unused();
  std::filesystem::path path = target;
  if (path.is_relative() && !c.origin().empty()) path = c.origin().parent_path() / path;
  Config base = Config::from_file(path);
  base.set("experiment.seed", std::to_string(r.seed));
  const std::size_t saved = thread_cap();
  r.table.header = {"run", "threads", "csv_bytes", "json_bytes", "csv_fnv1a", "json_fnv1a"};
  std::string csv0, json0;
  bool same = true;
  int run = 0;
  for (auto t : threads) {
    for (int k = 0; k < (t == threads.front() ? repeats : 1); ++k) {
      thread_cap() = static_cast<std::size_t>(t);
      Config cfg = base;
      RunResult sub;
      try {
        sub = run_experiment(cfg);
      } catch (...) {
        thread_cap() = saved;
        throw;
      }
      const std::string csv = emit_csv(sub.table), json = emit_json(sub);
      if (run == 0) {
        csv0 = csv;
        json0 = json;
      }
      same = same && csv == csv0 && json == json0;
      char hc[17], hj[17];
      std::snprintf(hc, sizeof hc, "%016llx", static_cast<unsigned long long>(fnv1a(csv)));
      std::snprintf(hj, sizeof hj, "%016llx", static_cast<unsigned long long>(fnv1a(json)));
      r.table.add({std::int64_t{run}, std::int64_t{t}, std::int64_t(csv.size()), std::int64_t(json.size()),
                   std::string(hc), std::string(hj)});
      ++run;
    }
  }
  thread_cap() = saved;
  r.metrics["target"] = path.filename().string();
  r.check("byte_identical", same, std::to_string(run) + " runs of " + path.filename().string());
}

/// Parses, validates and runs one config. ConfigError keys are qualified
/// with their section when the library reported a bare name.
inline RunResult run_experiment(const Config& cfg) {
  RunResult r;
  r.config = cfg.echo();
  r.name = cfg.stem();
  try {
    r.kind = cfg.str("experiment.kind");
    r.criterion = static_cast<int>(cfg.integer("experiment.criterion", 0));
    r.seed = cfg.u64("experiment.seed", 1);
    const int n_env = static_cast<int>(cfg.integer("experiment.n_env", 8));
    require(n_env >= 1, "experiment.n_env", "must be positive");
    cfg.str("experiment.description", "");
    if (r.kind == "solve") run_solve(cfg, r, n_env);
    else if (r.kind == "effective") run_effective(cfg, r, n_env);
    else if (r.kind == "corrector") run_corrector(cfg, r, n_env);
    else if (r.kind == "obstacle") run_obstacle(cfg, r, n_env);
    else if (r.kind == "rate") run_rate(cfg, r, n_env);
    else if (r.kind == "moments") run_moments(cfg, r, n_env);
    else if (r.kind == "ergodic") run_ergodic(cfg, r, n_env);
    else if (r.kind == "regularity") run_regularity(cfg, r, n_env);
    else if (r.kind == "determinism") run_determinism(cfg, r, n_env);
    else throw ConfigError("experiment.kind", "unknown experiment kind '" + r.kind + "'");
  } catch (const ConfigError& e) {
    const std::string q = cfg.qualify(e.key());
    if (q == e.key()) throw;
    throw ConfigError(q, std::string(e.what()).substr(e.key().size() + 2));
  }
  return r;
}

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_science = 2 };

struct Outcome {
  std::filesystem::path path;
  RunResult result;
  int code = exit_ok;
  std::string message;
  double seconds = 0.0;
};

/// Loads, runs and optionally writes <out>/<stem>.csv and <stem>.json.
/// ConfigError maps to exit 1, SolveError and failed checks to exit 2.
inline Outcome run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = {},
                          const std::filesystem::path& out_dir = {},
                          const std::function<void(Config&)>& adjust = {}) {
  Outcome o;
  o.path = path;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Config cfg = Config::from_file(path);
    if (seed) cfg.set("experiment.seed", std::to_string(*seed));
    if (adjust) adjust(cfg);
    o.result = run_experiment(cfg);
    const std::string csv = emit_csv(o.result.table), json = emit_json(o.result);
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      std::ofstream(out_dir / (o.result.name + ".csv"), std::ios::binary) << csv;
      std::ofstream(out_dir / (o.result.name + ".json"), std::ios::binary) << json;
    }
    if (!o.result.pass()) {
      o.code = exit_science;
      for (const auto& c : o.result.checks) {
        if (!c.pass) o.message += (o.message.empty() ? "" : "; ") + c.name + " failed" + (c.detail.empty() ? "" : " (" + c.detail + ")");
      }
    }
  } catch (const ConfigError& e) {
    o.code = exit_config;
    o.message = std::string("config error: ") + e.what();
  } catch (const SolveError& e) {
    o.code = exit_science;
    o.message = std::string("solve error: ") + e.what();
  } catch (const Error& e) {
    o.code = exit_science;
    o.message = e.what();
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

/// Sorted *.ini files of a directory, or the file itself.
inline std::vector<std::filesystem::path> config_files(const std::filesystem::path& p) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(p)) {
    for (const auto& e : std::filesystem::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".ini") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else if (std::filesystem::exists(p)) {
    out.push_back(p);
  } else {
    throw ConfigError("config", "no such file or directory '" + p.string() + "'");
  }
  return out;
}

/// experiment.criterion of a config without running it; 0 when absent.
inline int config_criterion(const std::filesystem::path& p) {
  return static_cast<int>(Config::from_file(p).integer("experiment.criterion", 0));
}

}  // namespace homlab
