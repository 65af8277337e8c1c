#pragma once

// Monotone explicit time stepping for u_t - F(D^2 u, x/eps, t/eps^2) = f on a
// GridSpec, with parabolic boundary data. Every solve in the library goes
// through `march`.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "homlab/effective_table.hpp"
#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/operators.hpp"

namespace homlab {

using SpaceTimeFn = std::function<double(std::span<const double>, double)>;

enum class Projection { none, above, below };

struct SolveConfig {
  double cfl = 0.9;
  double eps = 0.0;  // 0: the environment is read at (x, t) directly
  double ell = 0.0;
  SpaceTimeFn rhs;       // added to ell when set
  SpaceTimeFn boundary;  // data on the parabolic boundary; zero when unset
  Projection projection = Projection::none;
  bool check_resolution = true;
  long store_stride = 1;  // keep every k-th level (the last is always kept); 0 keeps bottom and top

  void validate() const {
    require(cfl > 0.0 && cfl <= 1.0, "cfl", "must lie in (0, 1]");
    require(eps >= 0.0 && std::isfinite(eps), "eps", "must be nonnegative");
    require(std::isfinite(ell), "ell", "must be finite");
    require(store_stride >= 0, "store_stride", "must be nonnegative");
  }
};

/// Largest coefficient multiplying the centre node of the second differences.
inline double effective_Lambda(const OperatorSpec& op, const EnvSample* env) {
  double L = op.profile_slope();
  if (op.modulated) {
    if (env == nullptr) throw ConfigError("environment", "modulated operator needs an environment");
    L *= env->spec.max_value();
  }
  return L;
}

/// Largest stable and monotone time step for spacing h.
inline double max_stable_dt(int d, double h, double Lambda_eff, double cfl) {
  return cfl * h * h / (2.0 * d * Lambda_eff);
}

namespace detail {

inline void check_cfl(const GridSpec& g, double Lambda_eff, double cfl) {
  const double limit = max_stable_dt(g.d, g.h, Lambda_eff, cfl);
  if (g.dt > limit * (1.0 + 1e-12)) {
    throw ConfigError("dt", "time step " + std::to_string(g.dt) + " exceeds the monotonicity bound " +
                                std::to_string(limit) + " = cfl*h^2/(2 d Lambda_eff)");
  }
}

inline void check_resolution(const GridSpec& g, const OperatorSpec& op, const EnvSample* env,
                             double eps) {
  if (!op.modulated || env == nullptr || env->spec.is_constant()) return;
  const double e = eps > 0.0 ? eps : 1.0;
  const double hx = e * env->spec.cell_x / 8.0;
  const double ht = e * e * env->spec.cell_t / 8.0;
  if (g.h > hx * (1.0 + 1e-12)) {
    throw ConfigError("h", "spacing " + std::to_string(g.h) + " does not resolve the medium (need h <= " +
                               std::to_string(hx) + ")");
  }
  if (g.dt > ht * (1.0 + 1e-12)) {
    throw ConfigError("dt", "time step " + std::to_string(g.dt) +
                                " does not resolve the medium (need dt <= " + std::to_string(ht) + ")");
  }
}

}  // namespace detail

/// a(x/eps, t/eps^2) on the nodes of one time level, recomputed only when the
/// field can have changed.
class CoefficientSlice {
 public:
  CoefficientSlice(const OperatorSpec& op, const EnvSample* env, const GridSpec& g, double eps)
      : env_(op.modulated ? env : nullptr), eps_(eps), d_(g.d) {
    if (op.modulated && env == nullptr) {
      throw ConfigError("environment", "modulated operator needs an environment");
    }
    if (env_ != nullptr && env_->dim() != g.d) {
      throw ConfigError("environment.d", "environment dimension differs from the grid");
    }
    const std::size_t ns = g.space_size();
    a_.assign(ns, 1.0);
    if (env_ == nullptr) return;
    y_.resize(ns * static_cast<std::size_t>(d_));
    const double s = eps_ > 0.0 ? 1.0 / eps_ : 1.0;
    for (std::size_t i = 0; i < ns; ++i) {
      g.coords(i, std::span<double>(y_.data() + i * d_, static_cast<std::size_t>(d_)));
      for (int k = 0; k < d_; ++k) y_[i * d_ + k] *= s;
    }
  }

  std::span<const double> at(double t) {
    if (env_ == nullptr) return a_;
    const double s = eps_ > 0.0 ? t / (eps_ * eps_) : t;
    const auto piece = env_->time_piece(s);
    if (piece && valid_ && *piece == piece_) return a_;
    for (std::size_t i = 0; i < a_.size(); ++i) {
      a_[i] = env_->eval(std::span<const double>(y_.data() + i * d_, static_cast<std::size_t>(d_)), s);
    }
    valid_ = piece.has_value();
    if (piece) piece_ = *piece;
    return a_;
  }

 private:
  const EnvSample* env_;
  double eps_;
  int d_;
  std::vector<double> y_;
  std::vector<double> a_;
  std::int64_t piece_ = 0;
  bool valid_ = false;
};

/// Generic explicit march. `rate(step, u, out)` writes F + f at the interior
/// nodes of level `step`; `observe(step, u)` sees every level after boundary
/// data and projection are applied.
template <class Rate, class Observe>
void march(const GridSpec& g, const SolveConfig& cfg, Rate&& rate, Observe&& observe) {
  cfg.validate();
  const std::size_t ns = g.space_size();
  std::vector<double> u(ns), du(ns, 0.0);
  std::vector<double> xs(static_cast<std::size_t>(g.d));
  std::vector<std::size_t> lateral, interior;
  for (std::size_t i = 0; i < ns; ++i) (g.lateral(i) ? lateral : interior).push_back(i);
  auto data = [&](std::size_t i, double t) {
    if (!cfg.boundary) return 0.0;
    g.coords(i, xs);
    return cfg.boundary(xs, t);
  };
  for (std::size_t i = 0; i < ns; ++i) u[i] = data(i, g.t(0));
  observe(0L, std::span<const double>(u));
  const double dt = g.dt;
  for (long n = 0; n < g.nt(); ++n) {
    rate(n, std::span<const double>(u), std::span<double>(du));
    const double t1 = g.t(n + 1);
    bool finite = true;
    switch (cfg.projection) {
      case Projection::none:
        for (std::size_t i : interior) u[i] += dt * du[i];
        break;
      case Projection::above:
        for (std::size_t i : interior) u[i] = std::max(u[i] + dt * du[i], 0.0);
        break;
      case Projection::below:
        for (std::size_t i : interior) u[i] = std::min(u[i] + dt * du[i], 0.0);
        break;
    }
    for (std::size_t i : interior) finite = finite && std::isfinite(u[i]);
    if (!finite) {
      throw SolveError("nan", "non-finite value produced at step " + std::to_string(n + 1));
    }
    if (cfg.boundary) {
      for (std::size_t i : lateral) u[i] = data(i, t1);
    }
    observe(n + 1, std::span<const double>(u));
  }
}

/// Rate functor for an operator of the shipped family.
class OperatorRate {
 public:
  OperatorRate(const OperatorSpec& op, const EnvSample* env, const GridSpec& g, const SolveConfig& cfg)
      : op_(op), g_(g), cfg_(cfg), coeff_(op, env, g, cfg.eps) {
    op.validate();
    if (op.base == BaseKind::linear_trace) {
      P_ = N_ = 1.0;
    } else if (op.base == BaseKind::pucci_plus) {
      P_ = op.Lambda;
      N_ = op.lambda;
    } else {
      P_ = op.lambda;
      N_ = op.Lambda;
    }
    const SymMatrix S = op.shift ? *op.shift : SymMatrix::zero(g.d);
    if (S.dim() != g.d) throw ConfigError("M", "shift dimension differs from the grid");
    if (g.d == 1) {
      s_[0] = S(0, 0);
    } else {
      s_[0] = S(0, 0);
      s_[1] = S(1, 1);
      s_[2] = 0.5 * (S(0, 0) + 2.0 * S(0, 1) + S(1, 1));
      s_[3] = 0.5 * (S(0, 0) - 2.0 * S(0, 1) + S(1, 1));
      trace_ = S.trace();
    }
    if (cfg.rhs) {
      const std::size_t ns = g.space_size();
      xs_.resize(ns * static_cast<std::size_t>(g.d));
      for (std::size_t i = 0; i < ns; ++i) {
        g.coords(i, std::span<double>(xs_.data() + i * g.d, static_cast<std::size_t>(g.d)));
      }
    }
  }

  double phi(double e) const { return e > 0.0 ? P_ * e : N_ * e; }

  void operator()(long n, std::span<const double> u, std::span<double> out) {
    const double t = g_.t(n);
    const auto a = coeff_.at(t);
    const double ih2 = 1.0 / (g_.h * g_.h);
    const double ell = cfg_.ell;
    if (g_.d == 1) {
      const std::size_t nx = static_cast<std::size_t>(g_.nodes(0));
      for (std::size_t i = 1; i + 1 < nx; ++i) {
        const double D = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * ih2 + s_[0];
        out[i] = a[i] * phi(D) + ell;
      }
    } else {
      const std::size_t nx = static_cast<std::size_t>(g_.nodes(0));
      const std::size_t ny = static_cast<std::size_t>(g_.nodes(1));
      const double id2 = 0.5 * ih2;
      const bool linear = op_.base == BaseKind::linear_trace;
      for (std::size_t j = 1; j + 1 < ny; ++j) {
        for (std::size_t i = 1; i + 1 < nx; ++i) {
          const std::size_t c = j * nx + i;
          const double uc2 = 2.0 * u[c];
          const double Dx = (u[c + 1] - uc2 + u[c - 1]) * ih2;
          const double Dy = (u[c + nx] - uc2 + u[c - nx]) * ih2;
          if (linear) {
            out[c] = a[c] * (Dx + Dy + trace_) + ell;
            continue;
          }
          const double D1 = Dx + s_[0];
          const double D2 = Dy + s_[1];
          const double D3 = (u[c + nx + 1] - uc2 + u[c - nx - 1]) * id2 + s_[2];
          const double D4 = (u[c + nx - 1] - uc2 + u[c - nx + 1]) * id2 + s_[3];
          const double emax = std::max(std::max(D1, D2), std::max(D3, D4));
          const double emin = std::min(std::min(D1, D2), std::min(D3, D4));
          out[c] = a[c] * (phi(emax) + phi(emin)) + ell;
        }
      }
    }
    if (cfg_.rhs) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (g_.lateral(i)) continue;
        out[i] += cfg_.rhs(std::span<const double>(xs_.data() + i * g_.d, static_cast<std::size_t>(g_.d)), t);
      }
    }
  }

 private:
  OperatorSpec op_;
  const GridSpec& g_;
  const SolveConfig& cfg_;
  CoefficientSlice coeff_;
  double P_ = 1.0, N_ = 1.0;
  double s_[4] = {0.0, 0.0, 0.0, 0.0};
  double trace_ = 0.0;
  std::vector<double> xs_;
};

/// Checks shared by every operator solve: CFL and medium resolution.
inline void check_solve(const OperatorSpec& op, const EnvSample* env, const SolveConfig& cfg,
                        const GridSpec& g) {
  op.validate();
  cfg.validate();
  detail::check_cfl(g, effective_Lambda(op, env), cfg.cfl);
  if (cfg.check_resolution) detail::check_resolution(g, op, env, cfg.eps);
}

/// Collects levels into a SpaceTimeField according to cfg.store_stride.
class FieldRecorder {
 public:
  FieldRecorder(const GridSpec& g, long stride) : stride_(stride) {
    field_.spec = g;
    last_ = g.nt();
  }
  void operator()(long step, std::span<const double> u) {
    const bool keep = step == 0 || step == last_ || (stride_ > 0 && step % stride_ == 0);
    if (!keep) return;
    field_.steps.push_back(step);
    field_.values.insert(field_.values.end(), u.begin(), u.end());
  }
  SpaceTimeField take() { return std::move(field_); }

 private:
  SpaceTimeField field_;
  long stride_;
  long last_;
};

/// u_t - F(D^2 u, x/eps, t/eps^2) = ell + rhs with u = boundary on the
/// parabolic boundary.
inline SpaceTimeField solve_parabolic(const OperatorSpec& op, const EnvSample* env,
                                      const SolveConfig& cfg, const GridSpec& g) {
  check_solve(op, env, cfg, g);
  OperatorRate rate(op, env, g, cfg);
  FieldRecorder rec(g, cfg.store_stride);
  march(g, cfg, rate, rec);
  return rec.take();
}

/// Same march, streaming levels to `observe` instead of storing them.
template <class Observe>
void solve_streaming(const OperatorSpec& op, const EnvSample* env, const SolveConfig& cfg,
                     const GridSpec& g, Observe&& observe) {
  check_solve(op, env, cfg, g);
  OperatorRate rate(op, env, g, cfg);
  march(g, cfg, rate, observe);
}

/// Grid on `domain` with spacing at most h and the largest monotone time step,
/// further limited by dt_cap when positive.
inline GridSpec make_grid(const ParabolicDomain& domain, double h, const OperatorSpec& op,
                          const EnvSample* env, double cfl = 0.9, double dt_cap = 0.0) {
  require(h > 0.0, "h", "must be positive");
  const GridSpec probe = GridSpec::make(domain, h, 1.0);
  double dt = max_stable_dt(domain.dim(), probe.h, effective_Lambda(op, env), cfl);
  if (dt_cap > 0.0) dt = std::min(dt, dt_cap);
  return GridSpec::make(domain, h, dt);
}

/// Largest spacing meeting the medium resolution rule h <= eps cell_x / 8,
/// together with the matching time-step cap (0 when there is no medium).
inline std::pair<double, double> resolution_limits(const OperatorSpec& op, const EnvSample* env,
                                                   double eps) {
  if (!op.modulated || env == nullptr || env->spec.is_constant()) {
    return {std::numeric_limits<double>::infinity(), 0.0};
  }
  const double e = eps > 0.0 ? eps : 1.0;
  return {e * env->spec.cell_x / 8.0, e * e * env->spec.cell_t / 8.0};
}

/// The unit cylinder Q_1 = B_1 x (-1, 0] in dimension d.
inline ParabolicDomain unit_cylinder(int d) {
  SpaceTimePoint c;
  c.x.assign(static_cast<std::size_t>(d), 0.0);
  return make_domain(DomainKind::cylinder, c, 1.0);
}

/// Corrector grid over Q_1 with spacing at most h that also meets the
/// resolution rule for eps.
inline GridSpec corrector_grid(int d, double h, const OperatorSpec& op, const EnvSample* env,
                               double eps, double cfl = 0.9) {
  const auto [hx, dtx] = resolution_limits(op, env, eps);
  return make_grid(unit_cylinder(d), std::min(h, hx), op, env, cfl, dtx);
}

/// w_s - F_M(D^2 w, y/eps, s/eps^2) = ell in Q_1, w = 0 on the parabolic boundary.
inline SpaceTimeField solve_corrector(const OperatorSpec& op, const EnvSample* env, const SymMatrix& M,
                                      double ell, double eps, const GridSpec& g, double cfl = 0.9,
                                      long store_stride = 1) {
  SolveConfig cfg;
  cfg.cfl = cfl;
  cfg.eps = eps;
  cfg.ell = ell;
  cfg.store_stride = store_stride;
  return solve_parabolic(op.shifted(M), env, cfg, g);
}

/// u_t - Fbar(u_xx) = 0 in d = 1 with the same monotone march. Fbar(0) is
/// subtracted so that constants are solutions.
inline SpaceTimeField solve_effective(const EffectiveTable& table, const GridSpec& g,
                                      const SpaceTimeFn& boundary, double cfl = 0.9,
                                      long store_stride = 1) {
  table.validate();
  require(g.d == 1, "d", "the effective solve is tabulated for d = 1 only");
  require(table.lo() <= 0.0 && table.hi() >= 0.0, "fbar_table", "range must contain 0");
  require(table.min_slope() >= 0.0, "fbar_table", "must be nondecreasing");
  const EffectiveTable T = table.normalized();
  SolveConfig cfg;
  cfg.cfl = cfl;
  cfg.boundary = boundary;
  cfg.store_stride = store_stride;
  detail::check_cfl(g, std::max(T.max_slope(), 1e-300), cfl);
  const double ih2 = 1.0 / (g.h * g.h);
  const std::size_t nx = static_cast<std::size_t>(g.nodes(0));
  auto rate = [&](long, std::span<const double> u, std::span<double> out) {
    for (std::size_t i = 1; i + 1 < nx; ++i) {
      out[i] = T.value((u[i + 1] - 2.0 * u[i] + u[i - 1]) * ih2);
    }
  };
  FieldRecorder rec(g, store_stride);
  march(g, cfg, rate, rec);
  return rec.take();
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ComparisonReport {
  int pairs = 0;
  double worst_violation = 0.0;  // max over nodes of (sub - super)_+
  bool pass = false;
};

namespace detail {

/// A smooth random function on the domain built from a few Fourier modes.
inline SpaceTimeFn random_smooth(std::uint64_t seed, double amplitude, bool nonnegative) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::array<double, 12> c{};
  for (double& v : c) v = U(rng);
  return [c, amplitude, nonnegative](std::span<const double> x, double t) {
    const double y = x.size() > 1 ? x[1] : 0.0;
    double v = c[0] + c[1] * std::sin(2.0 * x[0] + c[2]) + c[3] * std::cos(3.0 * y + c[4]) +
               c[5] * std::sin(1.5 * t + c[6]) + c[7] * x[0] * y + c[8] * std::cos(x[0] - t + c[9]) +
               c[10] * std::sin(4.0 * (x[0] + y) * c[11]);
    v *= amplitude;
    return nonnegative ? std::abs(v) : v;
  };
}

}  // namespace detail

/// Solves n_pairs random ordered problems (boundary and right-hand side of the
/// sub-problem below those of the super-problem) and records the worst
/// ordering violation.
inline ComparisonReport comparison_check(const OperatorSpec& op, const EnvSample* env,
                                         const SolveConfig& base, const GridSpec& g, int n_pairs,
                                         std::uint64_t seed, double slack = 1e-12) {
  require(n_pairs >= 1, "n_pairs", "must be positive");
  ComparisonReport rep;
  for (int k = 0; k < n_pairs; ++k) {
    const std::uint64_t s = derive_seed(seed, 0xc0fe, static_cast<std::uint64_t>(k));
    const SpaceTimeFn g1 = detail::random_smooth(hash_combine(s, 1), 1.0, false);
    const SpaceTimeFn dg = detail::random_smooth(hash_combine(s, 2), 0.5, true);
    const SpaceTimeFn f1 = detail::random_smooth(hash_combine(s, 3), 2.0, false);
    const SpaceTimeFn df = detail::random_smooth(hash_combine(s, 4), 1.0, true);
    SolveConfig lo = base, hi = base;
    lo.boundary = g1;
    hi.boundary = [g1, dg](std::span<const double> x, double t) { return g1(x, t) + dg(x, t); };
    lo.rhs = f1;
    hi.rhs = [f1, df](std::span<const double> x, double t) { return f1(x, t) + df(x, t); };
    lo.store_stride = hi.store_stride = 1;
    const SpaceTimeField a = solve_parabolic(op, env, lo, g);
    const SpaceTimeField b = solve_parabolic(op, env, hi, g);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      rep.worst_violation = std::max(rep.worst_violation, a.values[i] - b.values[i]);
    }
    ++rep.pairs;
  }
  rep.pass = rep.worst_violation <= slack;
  return rep;
}

/// sup u^- over the domain divided by (integral of (g^-)^(d+1))^(1/(d+1)).
/// `g` is the forcing sampled on the same grid levels as `u`.
inline double abp_ratio(const SpaceTimeField& u, const SpaceTimeField& g) {
  require(u.values.size() == g.values.size() && u.slice_size() == g.slice_size(), "g",
          "forcing must live on the same grid levels as u");
  const int d = u.spec.d;
  double sup_neg = 0.0, integral = 0.0;
  const double w = u.spec.node_weight();
  for (std::size_t j = 0; j < u.slices(); ++j) {
    for (std::size_t i = 0; i < u.slice_size(); ++i) {
      const double v = u.at(j, i);
      if (u.on_boundary(j, i)) {
        if (v < -1e-12) throw ConfigError("boundary", "abp_ratio needs u >= 0 on the parabolic boundary");
        continue;
      }
      sup_neg = std::max(sup_neg, -v);
      const double gm = std::max(0.0, -g.at(j, i));
      integral += w * std::pow(gm, d + 1);
    }
  }
  if (u.slices() > 1) {
    const double levels = static_cast<double>(u.spec.nt()) / static_cast<double>(u.slices() - 1);
    integral *= levels;
  }
  if (sup_neg == 0.0) return 0.0;
  const double denom = std::pow(integral, 1.0 / (d + 1));
  return denom > 0.0 ? sup_neg / denom : std::numeric_limits<double>::infinity();
}

}  // namespace homlab
