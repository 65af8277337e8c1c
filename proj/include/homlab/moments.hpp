#pragma once

// Monte Carlo moments of the normalized obstacle masses on the scale-k cubes
// G_k = (-3^k/2, 3^k/2)^d x (-9^k, 0], with monotonicity, variance-decay and
// product-decay diagnostics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/homogenize.hpp"
#include "homlab/obstacle.hpp"
#include "homlab/operators.hpp"
#include "homlab/parallel.hpp"
#include "homlab/solver.hpp"
#include "homlab/stats.hpp"

namespace homlab {

struct MomentReport {
  int k = 0;
  double E_above = 0.0, E_below = 0.0;
  double J_above = 0.0, J_below = 0.0;
  double V_above = 0.0, V_below = 0.0;
  double J_product = 0.0;
  int n_samples = 0;
  double se_E_above = 0.0, se_E_below = 0.0;
  double se_J_above = 0.0, se_J_below = 0.0;
  double se_J_product = 0.0;
};

struct MomentOptions {
  double h = 0.125;
  double cfl = 0.9;
  int max_k = 4;
  double work_budget = 0.0;  // node updates per call; 0 means unlimited
  std::vector<double> shift;  // translation of the cubes (d space components, then time)

  void validate() const {
    require(h > 0.0, "moments.h", "must be positive");
    require(max_k >= 0, "moments.max_k", "must be nonnegative");
    require(work_budget >= 0.0, "moments.work_budget", "must be nonnegative");
  }
  void validate(int d) const {
    validate();
    require(shift.empty() || static_cast<int>(shift.size()) == d + 1, "moments.shift", "needs d + 1 components");
  }
};

/// The scale-k parabolic cube, optionally translated by `shift` (d space
/// components then time).
inline ParabolicDomain moment_cube(int d, int k, std::span<const double> shift = {}) {
  const double side = std::pow(3.0, k), dur = std::pow(9.0, k);
  std::vector<double> lo(static_cast<std::size_t>(d), -side / 2.0), hi(static_cast<std::size_t>(d), side / 2.0);
  double t0 = -dur, t1 = 0.0;
  if (!shift.empty()) {
    for (std::size_t a = 0; a < lo.size(); ++a) {
      lo[a] += shift[a];
      hi[a] += shift[a];
    }
    t0 += shift[lo.size()];
    t1 += shift[lo.size()];
  }
  return make_box(lo, hi, t0, t1);
}

/// Index of a subcube of a scale-k cube: 3 per space axis, 9 in time.
struct SubcubeIndex {
  std::array<int, 3> x{};
  int t = 0;
};

inline int subcube_count(int d) { return static_cast<int>(std::pow(3.0, d + 2) + 0.5); }

inline SubcubeIndex subcube_index(int d, int n) {
  SubcubeIndex s;
  for (int a = 0; a < d; ++a) {
    s.x[static_cast<std::size_t>(a)] = n % 3;
    n /= 3;
  }
  s.t = n;
  return s;
}

inline ParabolicDomain subcube(const ParabolicDomain& parent, int n) {
  const int d = parent.dim();
  const SubcubeIndex s = subcube_index(d, n);
  std::vector<double> lo(parent.lo), hi(parent.hi);
  for (int a = 0; a < d; ++a) {
    const double w = (parent.hi[a] - parent.lo[a]) / 3.0;
    lo[a] = parent.lo[a] + w * s.x[static_cast<std::size_t>(a)];
    hi[a] = lo[a] + w;
  }
  const double wt = parent.duration() / 9.0;
  const double t0 = parent.t_lo + wt * s.t;
  return make_box(lo, hi, t0, t0 + wt);
}

/// Subcubes touching (faces, edges or corners, time included).
inline bool subcubes_adjacent(int d, int i, int j) {
  if (i == j) return false;
  const auto a = subcube_index(d, i), b = subcube_index(d, j);
  if (std::abs(a.t - b.t) > 1) return false;
  for (int q = 0; q < d; ++q) {
    if (std::abs(a.x[static_cast<std::size_t>(q)] - b.x[static_cast<std::size_t>(q)]) > 1) return false;
  }
  return true;
}

/// max(1, sup |l + F_M(0, .)|) over the coefficient range.
inline double mass_scale(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M, double ell) {
  const auto [lo, hi] = zero_operator_range(op, env_spec, M);
  return std::max({1.0, std::abs(ell + lo), std::abs(ell + hi)});
}

struct MassPair {
  double above = 0.0, below = 0.0;
};

/// Normalized masses of both obstacle problems for F_M on one domain.
inline MassPair obstacle_masses(const OperatorSpec& opM, const EnvSample& env, double ell,
                                const ParabolicDomain& D, double scale, const MomentOptions& opt) {
  const auto [hx, dtx] = resolution_limits(opM, &env, 0.0);
  const GridSpec g = make_grid(D, std::min(opt.h, hx), opM, &env, opt.cfl, dtx);
  MassPair m;
  m.above = obstacle_stats(opM, &env, ell, 0.0, g, Side::above, scale, opt.cfl).mass;
  m.below = obstacle_stats(opM, &env, ell, 0.0, g, Side::below, scale, opt.cfl).mass;
  return m;
}

namespace detail {

inline double work_of(const ParabolicDomain& D, const OperatorSpec& opM, const EnvSample& env,
                      const MomentOptions& opt) {
  const auto [hx, dtx] = resolution_limits(opM, &env, 0.0);
  const GridSpec g = make_grid(D, std::min(opt.h, hx), opM, &env, opt.cfl, dtx);
  return 2.0 * static_cast<double>(g.space_size()) * static_cast<double>(g.nt());
}

inline void check_budget(double work, const MomentOptions& opt) {
  if (opt.work_budget > 0.0 && work > opt.work_budget) {
    throw SolveError("budget", "requested " + std::to_string(work) + " node updates, budget " +
                                   std::to_string(opt.work_budget));
  }
}

inline MomentReport summarize_masses(int k, const std::vector<MassPair>& ms) {
  std::vector<double> a, b, a2, b2;
  for (const auto& m : ms) {
    a.push_back(m.above);
    b.push_back(m.below);
    a2.push_back(m.above * m.above);
    b2.push_back(m.below * m.below);
  }
  MomentReport r;
  r.k = k;
  r.n_samples = static_cast<int>(ms.size());
  r.E_above = mean(a);
  r.E_below = mean(b);
  r.J_above = mean(a2);
  r.J_below = mean(b2);
  r.V_above = std::max(0.0, r.J_above - r.E_above * r.E_above);
  r.V_below = std::max(0.0, r.J_below - r.E_below * r.E_below);
  r.J_product = r.J_above * r.J_below;
  r.se_E_above = std_error(a);
  r.se_E_below = std_error(b);
  r.se_J_above = std_error(a2);
  r.se_J_below = std_error(b2);
  r.se_J_product = std::hypot(r.J_below * r.se_J_above, r.J_above * r.se_J_below);
  return r;
}

}  // namespace detail

/// Moments of the normalized masses on G_k for each k in k_list, using the
/// same n_env realizations at every scale.
inline std::vector<MomentReport> estimate_moments(const OperatorSpec& op, const EnvSpec& env_spec,
                                                  const SymMatrix& M, double ell, const std::vector<int>& k_list,
                                                  int n_env, std::uint64_t seed, const MomentOptions& opt = {}) {
  opt.validate(M.dim());
  env_spec.validate();
  require(!k_list.empty(), "k_list", "must not be empty");
  require(n_env >= 1, "n_env", "must be positive");
  require(env_spec.d == M.dim(), "environment.d", "must match the dimension of M");
  for (int k : k_list) require(k >= 0 && k <= opt.max_k, "k_list", "scales must lie in [0, max_k]");
  const OperatorSpec opM = op.shifted(M);
  const int d = M.dim();
  const double scale = mass_scale(op, env_spec, M, ell);
  std::vector<EnvSample> envs;
  for (int i = 0; i < n_env; ++i) envs.push_back(sample_env(env_spec, derive_seed(seed, 4, static_cast<std::uint64_t>(i))));
  double work = 0.0;
  for (int k : k_list) work += n_env * detail::work_of(moment_cube(d, k, opt.shift), opM, envs.front(), opt);
  detail::check_budget(work, opt);
  std::vector<MomentReport> out;
  for (int k : k_list) {
    const ParabolicDomain D = moment_cube(d, k, opt.shift);
    const auto ms = parallel_map<MassPair>(envs.size(), [&](std::size_t i) {
      return obstacle_masses(opM, envs[i], ell, D, scale, opt);
    });
    out.push_back(detail::summarize_masses(k, ms));
  }
  return out;
}

struct MonotonicityReport {
  std::vector<bool> above, below, product;  // one entry per adjacent pair
  bool pass = false;
};

/// J_{k+1} <= J_k + 2 (se_k + se_{k+1}) for both sides and for the product.
inline MonotonicityReport monotonicity_check(const std::vector<MomentReport>& reports) {
  require(reports.size() >= 2, "reports", "need at least two scales");
  MonotonicityReport r;
  r.pass = true;
  for (std::size_t i = 0; i + 1 < reports.size(); ++i) {
    const auto& a = reports[i];
    const auto& b = reports[i + 1];
    require(b.k > a.k, "reports", "scales must be increasing");
    r.above.push_back(b.J_above <= a.J_above + 2.0 * (a.se_J_above + b.se_J_above));
    r.below.push_back(b.J_below <= a.J_below + 2.0 * (a.se_J_below + b.se_J_below));
    r.product.push_back(b.J_product <= a.J_product + 2.0 * (a.se_J_product + b.se_J_product));
    r.pass = r.pass && r.above.back() && r.below.back() && r.product.back();
  }
  return r;
}

struct VarianceDecayReport {
  double lhs = 0.0;       // Var[A], A = average of the subcube masses
  double lhs_stderr = 0.0;
  double rhs = 0.0;       // V_sub (N + P) / N^2
  double v_sub = 0.0;
  int subcubes = 0;
  int adjacent_pairs = 0;  // ordered
  bool pass = false;
};

namespace detail {

/// Standard error of the unbiased sample variance.
inline double variance_stderr(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 4) return 0.0;
  const double m = mean(v);
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double e = (x - m) * (x - m);
    m2 += e;
    m4 += e * e;
  }
  m2 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  return std::sqrt(std::max(0.0, m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / static_cast<double>(n));
}

}  // namespace detail

/// Variance of subcube averages against the finite-range bound. `masses`
/// holds one row of subcube masses per realization. Subcubes that are not
/// adjacent read disjoint cells and are independent; adjacent pairs are
/// bounded by Cauchy-Schwarz, giving Var[A] <= V_sub (N + P) / N^2.
inline VarianceDecayReport variance_decay_from_masses(const std::vector<std::vector<double>>& masses, int d) {
  require(masses.size() >= 4, "n_env", "need at least four realizations");
  const int N = subcube_count(d);
  VarianceDecayReport r;
  r.subcubes = N;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) r.adjacent_pairs += subcubes_adjacent(d, i, j);
  }
  std::vector<double> avg, pooled;
  std::vector<double> centred;
  for (const auto& row : masses) {
    require(static_cast<int>(row.size()) == N, "masses", "one entry per subcube required");
    avg.push_back(mean(row));
  }
  // V_sub: variance over realizations, averaged over subcube positions
  double v = 0.0;
  for (int i = 0; i < N; ++i) {
    std::vector<double> col;
    for (const auto& row : masses) col.push_back(row[static_cast<std::size_t>(i)]);
    v += variance(col);
  }
  r.v_sub = v / N;
  r.lhs = variance(avg);
  r.lhs_stderr = detail::variance_stderr(avg);
  r.rhs = r.v_sub * static_cast<double>(N + r.adjacent_pairs) / (static_cast<double>(N) * N);
  r.pass = r.lhs <= r.rhs + 3.0 * r.lhs_stderr;
  return r;
}

struct SubcubeMasses {
  std::vector<std::vector<double>> above, below;  // [realization][subcube]
};

/// Masses of both obstacle problems on every subcube of G_{parent_k}.
inline SubcubeMasses subcube_masses(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M,
                                    double ell, int parent_k, int n_env, std::uint64_t seed,
                                    const MomentOptions& opt = {}) {
  opt.validate(M.dim());
  env_spec.validate();
  require(parent_k >= 1 && parent_k <= opt.max_k, "parent_k", "must lie in [1, max_k]");
  require(n_env >= 4, "n_env", "need at least four realizations");
  const int d = M.dim();
  const OperatorSpec opM = op.shifted(M);
  const double scale = mass_scale(op, env_spec, M, ell);
  const ParabolicDomain parent = moment_cube(d, parent_k, opt.shift);
  const int N = subcube_count(d);
  const auto probe = sample_env(env_spec, seed);
  detail::check_budget(n_env * N * detail::work_of(subcube(parent, 0), opM, probe, opt), opt);
  const auto rows = parallel_map<std::vector<MassPair>>(static_cast<std::size_t>(n_env), [&](std::size_t i) {
    const EnvSample env = sample_env(env_spec, derive_seed(seed, 5, i));
    std::vector<MassPair> row;
    for (int n = 0; n < N; ++n) row.push_back(obstacle_masses(opM, env, ell, subcube(parent, n), scale, opt));
    return row;
  });
  SubcubeMasses s;
  for (const auto& row : rows) {
    std::vector<double> a, b;
    for (const auto& m : row) {
      a.push_back(m.above);
      b.push_back(m.below);
    }
    s.above.push_back(std::move(a));
    s.below.push_back(std::move(b));
  }
  return s;
}

struct VarianceDecayPair {
  VarianceDecayReport above, below;
  bool pass = false;
};

inline VarianceDecayPair variance_decay_check(const OperatorSpec& op, const EnvSpec& env_spec, const SymMatrix& M,
                                              double ell, int parent_k, int n_env, std::uint64_t seed,
                                              const MomentOptions& opt = {}) {
  const auto s = subcube_masses(op, env_spec, M, ell, parent_k, n_env, seed, opt);
  VarianceDecayPair p;
  p.above = variance_decay_from_masses(s.above, M.dim());
  p.below = variance_decay_from_masses(s.below, M.dim());
  p.pass = p.above.pass && p.below.pass;
  return p;
}

struct ProductDecayReport {
  std::vector<int> k;
  std::vector<double> J_product;
  bool identically_zero = false;
  bool decreasing = false;  // J_{k+1} < J_k + 2 (se_k + se_{k+1}) and net decrease
  double log_slope = 0.0;   // fit of log J_product against k (0 when undefined)
  bool pass = false;
};

inline ProductDecayReport product_decay(const std::vector<MomentReport>& reports) {
  require(reports.size() >= 3, "reports", "need at least three scales");
  ProductDecayReport r;
  bool all_zero = true, within = true;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    r.k.push_back(reports[i].k);
    r.J_product.push_back(reports[i].J_product);
    all_zero = all_zero && reports[i].J_product == 0.0;
    if (reports[i].J_product > 0.0) {
      xs.push_back(reports[i].k);
      ys.push_back(std::log(reports[i].J_product));
    }
    if (i > 0) {
      const auto& a = reports[i - 1];
      const auto& b = reports[i];
      within = within && b.J_product < a.J_product + 2.0 * (a.se_J_product + b.se_J_product);
    }
  }
  r.identically_zero = all_zero;
  r.decreasing = !all_zero && within && reports.back().J_product < reports.front().J_product;
  if (xs.size() >= 2) r.log_slope = fit_line(xs, ys).slope;
  r.pass = r.identically_zero || r.decreasing;
  return r;
}

}  // namespace homlab
