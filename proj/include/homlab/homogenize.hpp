#pragma once

// Effective operator Fbar(M): two independent estimators (obstacle contact
// dichotomy and corrector sign), tabulation, ellipticity diagnostics and the
// end-to-end homogenization and corrector-decay experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "homlab/effective_table.hpp"
#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/obstacle.hpp"
#include "homlab/operators.hpp"
#include "homlab/parallel.hpp"
#include "homlab/solver.hpp"
#include "homlab/stats.hpp"

namespace homlab {

enum class Method { contact_dichotomy, corrector_zero };

inline std::string to_string(Method m) {
  return m == Method::contact_dichotomy ? "contact_dichotomy" : "corrector_zero";
}

inline Method method_from_string(const std::string& s) {
  if (s == "contact_dichotomy") return Method::contact_dichotomy;
  if (s == "corrector_zero") return Method::corrector_zero;
  throw ConfigError("effective.method", "unknown method '" + s + "'");
}

/// How the dichotomy decides that l lies below the critical level.
///   mass_balance:      pi_above(l) > pi_below(l)
///   fraction_balance:  p_above(l) > p_below(l)
///   threshold:         p_above(l) > fraction_threshold
enum class Predicate { mass_balance, fraction_balance, threshold };

inline std::string to_string(Predicate p) {
  switch (p) {
    case Predicate::mass_balance: return "mass_balance";
    case Predicate::fraction_balance: return "fraction_balance";
    case Predicate::threshold: return "threshold";
  }
  return "?";
}

inline Predicate predicate_from_string(const std::string& s) {
  if (s == "mass_balance") return Predicate::mass_balance;
  if (s == "fraction_balance") return Predicate::fraction_balance;
  if (s == "threshold") return Predicate::threshold;
  throw ConfigError("effective.predicate", "unknown predicate '" + s + "'");
}

/// The scale-k cube C_{3^k}.
inline double scale_radius(int k) { return std::pow(3.0, k); }

/// Numerical parameters shared by the estimators. Problems are solved on the
/// cube C_R with the medium read at (y, s) directly, which is Q_1 with
/// eps = 1/R after parabolic rescaling.
struct EstimatorOptions {
  double R = 3.0;
  double h = 0.125;  // further limited by the medium resolution rule
  double cfl = 0.9;
  int n_env = 8;
  Predicate predicate = Predicate::mass_balance;
  double fraction_threshold = 0.5;
  double tol = 1e-2;  // target bracket width
  long budget = 0;    // maximal number of PDE solves; 0 means unlimited

  void validate() const {
    require(R > 0.0, "effective.R", "must be positive");
    require(h > 0.0, "effective.h", "must be positive");
    require(n_env >= 1, "n_env", "must be positive");
    require(tol > 0.0, "effective.tol", "must be positive");
    require(fraction_threshold > 0.0 && fraction_threshold < 1.0, "effective.fraction_threshold",
            "must lie in (0, 1)");
    require(budget >= 0, "effective.budget", "must be nonnegative");
  }
};

inline ParabolicDomain scale_cube(int d, double R) {
  SpaceTimePoint c;
  c.x.assign(static_cast<std::size_t>(d), 0.0);
  return make_domain(DomainKind::cube, c, R);
}

/// Fixed ensemble of realizations and their grids (common random numbers
/// across l).
struct Ensemble {
  std::vector<EnvSample> envs;
  std::vector<GridSpec> grids;
};

inline Ensemble make_ensemble(const OperatorSpec& op, const EnvSpec& env_spec, const ParabolicDomain& D,
                              double h, double cfl, double eps, int n_env, std::uint64_t seed) {
  env_spec.validate();
  require(env_spec.d == D.dim(), "environment.d", "must match the domain dimension");
  Ensemble e;
  for (int i = 0; i < n_env; ++i) {
    e.envs.push_back(sample_env(env_spec, derive_seed(seed, 1, static_cast<std::uint64_t>(i))));
  }
  const auto [hx, dtx] = resolution_limits(op, &e.envs.front(), eps);
  const GridSpec g = make_grid(D, std::min(h, hx), op, &e.envs.front(), cfl, dtx);
  e.grids.assign(static_cast<std::size_t>(n_env), g);
  return e;
}

struct FractionEstimate {
  double p_above = 0.0, p_below = 0.0;
  double se_above = 0.0, se_below = 0.0;
  double mass_above = 0.0, mass_below = 0.0;
  double se_mass_above = 0.0, se_mass_below = 0.0;
  int n_env = 0;
};

inline FractionEstimate fractions_on(const OperatorSpec& opM, const Ensemble& ens, double ell, double cfl) {
  struct Row {
    ContactStats up, dn;
  };
  const auto rows = parallel_map<Row>(ens.envs.size(), [&](std::size_t i) {
    Row r;
    r.up = obstacle_stats(opM, &ens.envs[i], ell, 0.0, ens.grids[i], Side::above, 1.0, cfl);
    r.dn = obstacle_stats(opM, &ens.envs[i], ell, 0.0, ens.grids[i], Side::below, 1.0, cfl);
    return r;
  });
  std::vector<double> pa, pb, ma, mb;
  for (const auto& r : rows) {
    pa.push_back(r.up.fraction);
    pb.push_back(r.dn.fraction);
    ma.push_back(r.up.mass);
    mb.push_back(r.dn.mass);
  }
  FractionEstimate f;
  f.n_env = static_cast<int>(rows.size());
  f.p_above = mean(pa);
  f.p_below = mean(pb);
  f.se_above = std_error(pa);
  f.se_below = std_error(pb);
  f.mass_above = mean(ma);
  f.mass_below = mean(mb);
  f.se_mass_above = std_error(ma);
  f.se_mass_below = std_error(mb);
  return f;
}

/// Ensemble contact fractions and masses of both obstacle problems for F_M
/// on C_R.
inline FractionEstimate contact_fractions(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M,
                                          double ell, double R, int n_env, std::uint64_t seed,
                                          double h = 0.125, double cfl = 0.9) {
  require(n_env >= 1, "n_env", "must be positive");
  const OperatorSpec opM = op.shifted(M);
  const Ensemble ens = make_ensemble(opM, env_spec, scale_cube(M.dim(), R), h, cfl, 0.0, n_env, seed);
  return fractions_on(opM, ens, ell, cfl);
}

/// beta of the comparison barrier w^{l + eta} >= w^l + beta eta (s + 1)(1 - |y|^2).
inline double barrier_beta(const OperatorSpec& op, const EnvSpec& env_spec, int d) {
  double L = op.profile_slope();
  if (op.modulated) L *= env_spec.max_value();
  return 1.0 / (1.0 + 2.0 * L * d);
}

struct EffectiveEstimate {
  SymMatrix M;
  double fbar = 0.0;
  Method method = Method::contact_dichotomy;
  double ell_lo = 0.0, ell_hi = 0.0;
  int n_env = 0;
  double scale = 0.0;  // R of the cube C_R
  double h = 0.0;
  double p_above = 0.0, p_below = 0.0;  // at the last evaluated l (dichotomy)
  double corrector_sup = 0.0;           // at the last evaluated l (corrector)
  double resolution = 0.0;              // contact_tol / (beta R^2)
  long solves = 0;
  double width() const { return ell_hi - ell_lo; }
};

/// Extremes of F_M(0, y, s) over the coefficient range.
inline std::pair<double, double> zero_operator_range(const OperatorSpec& op, const EnvSpec& env_spec,
                                                     const SymMatrix& M) {
  const double b0 = op.base_value(op.shift ? *op.shift + M : M);
  if (!op.modulated) return {b0, b0};
  const double a = env_spec.min_value() * b0, b = env_spec.max_value() * b0;
  return {std::min(a, b), std::max(a, b)};
}

namespace detail {

struct CorrectorProbe {
  double centre = 0.0;
  double sup = 0.0;
};

inline CorrectorProbe corrector_probe(const OperatorSpec& opM, const EnvSample& env, const GridSpec& g,
                                      double ell, double eps, double cfl) {
  SolveConfig cfg;
  cfg.cfl = cfl;
  cfg.eps = eps;
  cfg.ell = ell;
  std::size_t centre = 0;
  {
    long i0 = g.n(0) / 2, i1 = g.d > 1 ? g.n(1) / 2 : 0;
    centre = g.flat(i0, i1);
  }
  CorrectorProbe p;
  solve_streaming(opM, &env, cfg, g, [&](long step, std::span<const double> u) {
    for (double v : u) p.sup = std::max(p.sup, std::abs(v));
    if (step == g.nt()) p.centre = u[centre];
  });
  return p;
}

}  // namespace detail

/// Bisection for l* = -Fbar(M). The initial bracket
/// [-max F_M(0) - 1, -min F_M(0) + 1] is verified before bisecting.
inline EffectiveEstimate estimate_fbar(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M,
                                       Method method, const EstimatorOptions& opt, std::uint64_t seed) {
  opt.validate();
  op.validate();
  const OperatorSpec opM = op.shifted(M);
  const int n_env = env_spec.is_constant() || !op.modulated ? 1 : opt.n_env;
  const Ensemble ens = make_ensemble(opM, env_spec, scale_cube(M.dim(), opt.R), opt.h, opt.cfl, 0.0, n_env, seed);
  EffectiveEstimate est;
  est.M = M;
  est.method = method;
  est.n_env = n_env;
  est.scale = opt.R;
  est.h = ens.grids.front().h;
  est.resolution = contact_tol(opM, &ens.envs.front(), ens.grids.front()) /
                   (barrier_beta(op, env_spec, M.dim()) * opt.R * opt.R);
  const long cost = method == Method::contact_dichotomy ? 2L * n_env : n_env;

  // true when l is judged below the critical level -Fbar(M)
  auto below = [&](double ell) {
    if (opt.budget > 0 && est.solves + cost > opt.budget) {
      throw SolveError("budget", "solve budget of " + std::to_string(opt.budget) +
                                     " exhausted with bracket width " + std::to_string(est.width()));
    }
    est.solves += cost;
    if (method == Method::contact_dichotomy) {
      const auto f = fractions_on(opM, ens, ell, opt.cfl);
      est.p_above = f.p_above;
      est.p_below = f.p_below;
      switch (opt.predicate) {
        case Predicate::mass_balance: return f.mass_above > f.mass_below;
        case Predicate::fraction_balance: return f.p_above > f.p_below;
        case Predicate::threshold: return f.p_above > opt.fraction_threshold;
      }
      return false;
    }
    const auto probes = parallel_map<detail::CorrectorProbe>(ens.envs.size(), [&](std::size_t i) {
      return detail::corrector_probe(opM, ens.envs[i], ens.grids[i], ell, 0.0, opt.cfl);
    });
    double c = 0.0, s = 0.0;
    for (const auto& p : probes) {
      c += p.centre;
      s += p.sup;
    }
    est.corrector_sup = s / static_cast<double>(probes.size());
    return c < 0.0;
  };

  const auto [fmin, fmax] = zero_operator_range(op, env_spec, M);
  est.ell_lo = -fmax - 1.0;
  est.ell_hi = -fmin + 1.0;
  est.solves = 0;
  if (!below(est.ell_lo) || below(est.ell_hi)) {
    throw SolveError("bracket", "initial bracket [" + std::to_string(est.ell_lo) + ", " +
                                    std::to_string(est.ell_hi) + "] does not straddle the critical level");
  }
  while (est.width() > opt.tol) {
    const double mid = 0.5 * (est.ell_lo + est.ell_hi);
    (below(mid) ? est.ell_lo : est.ell_hi) = mid;
  }
  est.fbar = -0.5 * (est.ell_lo + est.ell_hi);
  return est;
}

struct AgreementReport {
  double difference = 0.0;
  double allowed = 0.0;  // summed bracket widths + 2 x discretization slack
  bool pass = false;
};

/// Agreement of two estimates of the same Fbar(M); the discretization slack
/// is the larger l-resolution of the contact tolerance.
inline AgreementReport method_agreement(const EffectiveEstimate& a, const EffectiveEstimate& b) {
  AgreementReport r;
  r.difference = std::abs(a.fbar - b.fbar);
  r.allowed = a.width() + b.width() + 2.0 * std::max(a.resolution, b.resolution);
  r.pass = r.difference <= r.allowed;
  return r;
}

/// Fbar on a list of scalar Hessians (d = 1).
inline EffectiveTable build_table(const OperatorSpec& op, const EnvSpec& env_spec, std::vector<double> ms,
                                  Method method, const EstimatorOptions& opt, std::uint64_t seed) {
  std::sort(ms.begin(), ms.end());
  EffectiveTable t;
  for (double m : ms) {
    const auto e = estimate_fbar(op, env_spec, SymMatrix::scalar(m), method, opt, seed);
    t.m.push_back(m);
    t.fbar.push_back(e.fbar);
    t.width.push_back(e.width());
  }
  t.validate();
  return t;
}

/// Table on [-range, range] from Fbar(1) and Fbar(-1) using positive
/// 1-homogeneity of every operator in the family (hence of Fbar).
inline EffectiveTable homogeneous_table(double f_plus, double f_minus, double range, double w_plus = 0.0,
                                        double w_minus = 0.0) {
  require(range > 0.0, "fbar_range", "must be positive");
  EffectiveTable t;
  t.m = {-range, -1.0, 0.0, 1.0, range};
  t.fbar = {range * f_minus, f_minus, 0.0, f_plus, range * f_plus};
  t.width = {range * w_minus, w_minus, 0.0, w_plus, range * w_plus};
  if (range <= 1.0) {
    t.m = {-range, 0.0, range};
    t.fbar = {range * f_minus, 0.0, range * f_plus};
    t.width = {range * w_minus, 0.0, range * w_plus};
  }
  t.validate();
  return t;
}

struct FbarEllipticityReport {
  int pairs = 0;
  int violations = 0;
  double min_slope = 0.0, max_slope = 0.0;
  bool pass = false;
};

/// lower (m_j - m_i) - slack <= Fbar(m_j) - Fbar(m_i) <= upper (m_j - m_i) + slack
/// over all sampled pairs, slack = 2 (w_i + w_j) from the bracket widths.
inline FbarEllipticityReport ellipticity_of_fbar(const EffectiveTable& t, double lower, double upper) {
  t.validate();
  require(t.m.size() >= 3, "fbar_table", "needs at least three samples");
  FbarEllipticityReport r;
  r.min_slope = INFINITY;
  r.max_slope = -INFINITY;
  for (std::size_t i = 0; i < t.m.size(); ++i) {
    for (std::size_t j = i + 1; j < t.m.size(); ++j) {
      const double dm = t.m[j] - t.m[i], df = t.fbar[j] - t.fbar[i];
      const double slack = t.width.empty() ? 0.0 : 2.0 * (t.width[i] + t.width[j]);
      ++r.pairs;
      r.min_slope = std::min(r.min_slope, df / dm);
      r.max_slope = std::max(r.max_slope, df / dm);
      if (df < lower * dm - slack || df > upper * dm + slack) ++r.violations;
    }
  }
  r.pass = r.violations == 0;
  return r;
}

/// Fine-grid periodic cell problem for a time-independent periodic medium in
/// d = 1 with F = a(y) m: chi_t = a(y) (m + chi_yy) on one period, marched
/// until the growth rate of chi settles. The rate is Fbar(m).
inline double periodic_cell_rate(const EnvSpec& env_spec, double m, int nodes_per_cell = 64, double T = 4.0) {
  env_spec.validate();
  require(env_spec.kind == EnvKind::periodic && env_spec.d == 1 && env_spec.period_t == 1, "environment.kind",
          "the periodic cell oracle needs a time-independent periodic medium in d = 1");
  require(nodes_per_cell >= 4, "oracle.nodes", "must be at least 4");
  const int n = nodes_per_cell * env_spec.period_x;
  const double h = env_spec.cell_x / nodes_per_cell;
  const double dt = 0.4 * h * h / env_spec.max_value();
  std::vector<double> a(static_cast<std::size_t>(n)), chi(a.size(), 0.0), next(a.size());
  for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = env_spec.table[static_cast<std::size_t>(i / nodes_per_cell)];
  double rate = 0.0;
  const long steps = static_cast<long>(std::ceil(T / dt));
  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      const double lap = (chi[static_cast<std::size_t>((i + 1) % n)] - 2.0 * chi[u] +
                          chi[static_cast<std::size_t>((i + n - 1) % n)]) / (h * h);
      next[u] = chi[u] + dt * a[u] * (m + lap);
    }
    rate = (next[0] - chi[0]) / dt;
    chi.swap(next);
  }
  return rate;
}

// ---------------------------------------------------------------------------
// Experiments

struct EpsRecord {
  double eps = 0.0;
  double median = 0.0, q90 = 0.0;
  double se_median = 0.0, se_q90 = 0.0;
  double h = 0.0, dt = 0.0;
  std::vector<double> values;  // per realization
  double exceed_fraction = 0.0;  // corrector decay only
};

struct DecayReport {
  std::vector<EpsRecord> records;
  double slope = 0.0;  // least-squares slope of log(median) against log(1/eps)
};

namespace detail {

inline void summarize(EpsRecord& r, std::uint64_t seed) {
  r.median = quantile(r.values, 0.5);
  r.q90 = quantile(r.values, 0.9);
  r.se_median = bootstrap_quantile_stderr(r.values, 0.5, 200, hash_combine(seed, 0x50));
  r.se_q90 = bootstrap_quantile_stderr(r.values, 0.9, 200, hash_combine(seed, 0x90));
}

inline double fit_decay(const std::vector<EpsRecord>& recs) {
  std::vector<double> x, y;
  for (const auto& r : recs) {
    if (r.median <= 0.0) continue;
    x.push_back(std::log(1.0 / r.eps));
    y.push_back(std::log(r.median));
  }
  return x.size() >= 2 ? fit_line(x, y).slope : 0.0;
}

inline void check_ladder(const std::vector<double>& eps_list) {
  require(!eps_list.empty(), "eps_list", "must not be empty");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    require(eps_list[i] > 0.0, "eps_list", "entries must be positive");
    if (i > 0) require(eps_list[i] < eps_list[i - 1], "eps_list", "must be decreasing");
  }
}

}  // namespace detail

/// D_T = (-1, 1) x (0, 1] in d = 1: sup-norm distance between u^eps and the
/// solution of the tabulated limit equation, both solved on the same grid and
/// compared on `levels` evenly spaced time levels plus the final one.
inline DecayReport homogenization_experiment(const OperatorSpec& op, const EnvSpec& env_spec,
                                             const SpaceTimeFn& g, const std::vector<double>& eps_list,
                                             const EffectiveTable& table, int n_env, std::uint64_t seed,
                                             double cfl = 0.9, long levels = 64) {
  detail::check_ladder(eps_list);
  require(env_spec.d == 1, "environment.d", "the homogenization experiment is tabulated for d = 1");
  require(n_env >= 1, "n_env", "must be positive");
  require(levels >= 1, "levels", "must be positive");
  const auto D = make_box({-1.0}, {1.0}, 0.0, 1.0);
  DecayReport rep;
  for (double eps : eps_list) {
    const EnvSample probe = sample_env(env_spec, derive_seed(seed, 2, 0));
    const auto [hx, dtx] = resolution_limits(op, &probe, eps);
    const double h = std::isfinite(hx) ? hx : eps / 8.0;
    const GridSpec grid = make_grid(D, h, op, &probe, cfl, dtx);
    const long stride = std::max(1L, grid.nt() / levels);
    const SpaceTimeField u = solve_effective(table, grid, g, cfl, stride);
    EpsRecord rec;
    rec.eps = eps;
    rec.h = grid.h;
    rec.dt = grid.dt;
    rec.values = parallel_map<double>(static_cast<std::size_t>(n_env), [&](std::size_t i) {
      const EnvSample env = sample_env(env_spec, derive_seed(seed, 2, i));
      SolveConfig cfg;
      cfg.cfl = cfl;
      cfg.eps = eps;
      cfg.boundary = g;
      cfg.store_stride = stride;
      double err = 0.0;
      std::size_t j = 0;
      solve_streaming(op, &env, cfg, grid, [&](long step, std::span<const double> v) {
        if (j < u.slices() && u.steps[j] == step) {
          const auto ref = u.slice(j);
          for (std::size_t k = 0; k < v.size(); ++k) err = std::max(err, std::abs(v[k] - ref[k]));
          ++j;
        }
      });
      return err;
    });
    detail::summarize(rec, hash_combine(seed, static_cast<std::uint64_t>(rep.records.size())));
    rep.records.push_back(std::move(rec));
  }
  rep.slope = detail::fit_decay(rep.records);
  return rep;
}

/// Ensemble quantiles of sup_{Q_1} |w_eps| at level l, with the fraction of
/// realizations above C_hat eps^(c_hat |ln eps|^(-2/3)).
inline DecayReport corrector_decay(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M, double ell,
                                   const std::vector<double>& eps_list, int n_env, std::uint64_t seed,
                                   double h = 0.125, double cfl = 0.9, double C_hat = 1.0, double c_hat = 1.0) {
  detail::check_ladder(eps_list);
  require(n_env >= 1, "n_env", "must be positive");
  const OperatorSpec opM = op.shifted(M);
  DecayReport rep;
  for (double eps : eps_list) {
    EpsRecord rec;
    rec.eps = eps;
    const EnvSample probe = sample_env(env_spec, derive_seed(seed, 3, 0));
    const GridSpec grid = corrector_grid(M.dim(), h, opM, &probe, eps, cfl);
    rec.h = grid.h;
    rec.dt = grid.dt;
    rec.values = parallel_map<double>(static_cast<std::size_t>(n_env), [&](std::size_t i) {
      const EnvSample env = sample_env(env_spec, derive_seed(seed, 3, i));
      return detail::corrector_probe(opM, env, grid, ell, eps, cfl).sup;
    });
    const double le = std::abs(std::log(eps));
    const double thr = le > 0.0 ? C_hat * std::pow(eps, c_hat * std::pow(le, -2.0 / 3.0)) : C_hat;
    std::size_t over = 0;
    for (double v : rec.values) over += v > thr;
    rec.exceed_fraction = static_cast<double>(over) / static_cast<double>(rec.values.size());
    detail::summarize(rec, hash_combine(seed, static_cast<std::uint64_t>(rep.records.size()) + 100));
    rep.records.push_back(std::move(rec));
  }
  rep.slope = detail::fit_decay(rep.records);
  return rep;
}

}  // namespace homlab
