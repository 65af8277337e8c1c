#pragma once

// Obstacle problems with obstacle 0 from above (smallest supersolution >= 0)
// and below (largest subsolution <= 0), realized by the projected march.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/operators.hpp"
#include "homlab/solver.hpp"

namespace homlab {

enum class Side { above, below };

inline std::string to_string(Side s) { return s == Side::above ? "above" : "below"; }

/// 10 (h^2 + dt) Lambda_eff (1 + |M|), where M is the operator's shift.
inline double contact_tol(const OperatorSpec& op, const EnvSample* env, const GridSpec& g) {
  const double m = op.shift ? op.shift->norm() : 0.0;
  return 10.0 * (g.h * g.h + g.dt) * effective_Lambda(op, env) * (1.0 + m);
}

/// F_M(0, y, s) for every node of one level, via the coefficient slice.
class ZeroOperatorValue {
 public:
  ZeroOperatorValue(const OperatorSpec& op, const EnvSample* env, const GridSpec& g, double eps)
      : base0_(op.base_value(op.shift ? *op.shift : SymMatrix::zero(g.d))), coeff_(op, env, g, eps) {}
  std::span<const double> coefficients(double t) { return coeff_.at(t); }
  double base0() const { return base0_; }

 private:
  double base0_;
  CoefficientSlice coeff_;
};

struct ContactStats {
  double measure = 0.0;   // |contact set|, node quadrature
  double fraction = 0.0;  // measure / |domain|
  double mass = 0.0;      // (1/|domain|) sum over contact of weight^(d+1) * node volume
  std::size_t contact_nodes = 0;
  std::size_t counted_nodes = 0;
};

/// Streaming accumulator of contact statistics: interior nodes of the levels
/// above the bottom, the top level included. The weight (l + F_M(0))_-
/// (above) or (l + F_M(0))_+ (below) is divided by `mass_scale` before it is
/// raised to the power d + 1.
class ContactAccumulator {
 public:
  ContactAccumulator(const OperatorSpec& op, const EnvSample* env, const GridSpec& g, double ell,
                     double eps, Side side, double tol, double mass_scale = 1.0)
      : g_(g), zero_(op, env, g, eps), ell_(ell), side_(side), tol_(tol), scale_(mass_scale) {
    require(mass_scale > 0.0, "mass_scale", "must be positive");
  }

  void operator()(long step, std::span<const double> v) {
    if (step == 0) return;
    const auto a = zero_.coefficients(g_.t(step));
    const double b0 = zero_.base0();
    const int p = g_.d + 1;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (g_.lateral(i)) continue;
      ++counted_;
      if (std::abs(v[i]) > tol_) continue;
      ++contact_;
      const double z = ell_ + a[i] * b0;
      const double w = (side_ == Side::above ? std::max(0.0, -z) : std::max(0.0, z)) / scale_;
      weight_sum_ += p == 2 ? w * w : w * w * w;
    }
  }

  ContactStats stats() const {
    ContactStats s;
    s.contact_nodes = contact_;
    s.counted_nodes = counted_;
    const double vol = g_.domain.volume();
    s.fraction = counted_ ? static_cast<double>(contact_) / static_cast<double>(counted_) : 0.0;
    s.measure = s.fraction * vol;
    s.mass = counted_ ? weight_sum_ / static_cast<double>(counted_) : 0.0;
    return s;
  }

 private:
  const GridSpec& g_;
  ZeroOperatorValue zero_;
  double ell_;
  Side side_;
  double tol_;
  double scale_;
  std::size_t contact_ = 0, counted_ = 0;
  double weight_sum_ = 0.0;
};

inline SolveConfig obstacle_config(double ell, double eps, Side side, double cfl) {
  SolveConfig cfg;
  cfg.cfl = cfl;
  cfg.eps = eps;
  cfg.ell = ell;
  cfg.projection = side == Side::above ? Projection::above : Projection::below;
  return cfg;
}

struct ResidualReport {
  double max_residual = 0.0;  // off-contact |v_s - F(D^2 v) - l|
  double tolerance = 0.0;
  bool pass = true;
};

struct ObstacleSolution {
  Side side = Side::above;
  SpaceTimeField v;
  std::vector<char> contact_mask;  // one entry per stored node; false on the parabolic boundary
  double contact_tol = 0.0;
  double contact_measure = 0.0;
  double fraction = 0.0;
  double mass = 0.0;
  ResidualReport residual;
};

/// Contact-set statistics without storing the solution.
inline ContactStats obstacle_stats(const OperatorSpec& op, const EnvSample* env, double ell, double eps,
                                   const GridSpec& g, Side side, double mass_scale = 1.0,
                                   double cfl = 0.9) {
  const SolveConfig cfg = obstacle_config(ell, eps, side, cfl);
  ContactAccumulator acc(op, env, g, ell, eps, side, contact_tol(op, env, g), mass_scale);
  solve_streaming(op, env, cfg, g, acc);
  return acc.stats();
}

/// Projected explicit march with zero initial and lateral data; `op` is used
/// as given (pass op.shifted(M) for F_M).
inline ObstacleSolution solve_obstacle(const OperatorSpec& op, const EnvSample* env, double ell,
                                       double eps, const GridSpec& g, Side side, double cfl = 0.9,
                                       double residual_tol = 1e-8) {
  const SolveConfig cfg = obstacle_config(ell, eps, side, cfl);
  ObstacleSolution sol;
  sol.side = side;
  sol.contact_tol = contact_tol(op, env, g);
  ContactAccumulator acc(op, env, g, ell, eps, side, sol.contact_tol);
  FieldRecorder rec(g, 1);
  solve_streaming(op, env, cfg, g, [&](long step, std::span<const double> v) {
    acc(step, v);
    rec(step, v);
  });
  sol.v = rec.take();
  const auto st = acc.stats();
  sol.contact_measure = st.measure;
  sol.fraction = st.fraction;
  sol.mass = st.mass;
  sol.contact_mask.assign(sol.v.values.size(), 0);
  for (std::size_t j = 0; j < sol.v.slices(); ++j) {
    for (std::size_t i = 0; i < sol.v.slice_size(); ++i) {
      if (!sol.v.on_boundary(j, i)) sol.contact_mask[j * sol.v.slice_size() + i] = std::abs(sol.v.at(j, i)) <= sol.contact_tol;
    }
  }
  // Discrete residual off the contact set.
  SolveConfig plain = cfg;
  plain.projection = Projection::none;
  OperatorRate rate(op, env, g, plain);
  std::vector<double> du(g.space_size());
  double scale = 1.0;
  for (std::size_t j = 0; j + 1 < sol.v.slices(); ++j) {
    rate(sol.v.steps[j], sol.v.slice(j), du);
    for (std::size_t i = 0; i < du.size(); ++i) {
      if (g.lateral(i) || sol.contact_mask[(j + 1) * sol.v.slice_size() + i]) continue;
      const double vs = (sol.v.at(j + 1, i) - sol.v.at(j, i)) / g.dt;
      scale = std::max(scale, std::abs(du[i]));
      sol.residual.max_residual = std::max(sol.residual.max_residual, std::abs(vs - du[i]));
    }
  }
  sol.residual.tolerance = residual_tol * scale;
  sol.residual.pass = sol.residual.max_residual <= sol.residual.tolerance;
  return sol;
}

/// Recomputes {measure, fraction, mass} for a stored solution.
inline ContactStats contact_stats(const ObstacleSolution& sol, const OperatorSpec& op, const EnvSample* env,
                                  double ell, double eps, double mass_scale = 1.0) {
  ContactAccumulator acc(op, env, sol.v.spec, ell, eps, sol.side, sol.contact_tol, mass_scale);
  for (std::size_t j = 0; j < sol.v.slices(); ++j) acc(sol.v.steps[j], sol.v.slice(j));
  return acc.stats();
}

struct NestingReport {
  std::size_t compared = 0;
  std::size_t mismatched = 0;
  std::size_t ambiguous = 0;
  bool pass = false;
};

/// Contact sets on K2 restricted to K1 against contact sets solved on K1,
/// where K1 shares K2's spatial box and bottom and ends no later.
inline NestingReport nesting_check(const OperatorSpec& op, const EnvSample* env, double ell, double eps,
                                   const ParabolicDomain& K1, const ParabolicDomain& K2, double h,
                                   Side side, double cfl = 0.9) {
  require(K1.dim() == K2.dim() && K1.kind == K2.kind && K1.lo == K2.lo && K1.hi == K2.hi, "K1",
          "must share the spatial region of K2");
  require(std::abs(K1.t_lo - K2.t_lo) <= 1e-12 * std::max(1.0, std::abs(K2.t_lo)) &&
              K1.t_hi <= K2.t_hi + 1e-12,
          "K1", "parabolic boundary must lie in that of K2 (same bottom, earlier or equal top)");
  const auto [hx, dtx] = resolution_limits(op, env, eps);
  const GridSpec g2 = make_grid(K2, std::min(h, hx), op, env, cfl, dtx);
  const double steps = K1.duration() / g2.dt;
  const long n1 = std::lround(steps);
  require(n1 >= 1 && std::abs(steps - static_cast<double>(n1)) <= 1e-6, "K1",
          "time extent must be a whole number of time steps of the K2 grid");
  GridSpec g1 = GridSpec::make(K1, g2.h, K1.duration() / static_cast<double>(n1));
  const auto s2 = solve_obstacle(op, env, ell, eps, g2, side, cfl);
  const auto s1 = solve_obstacle(op, env, ell, eps, g1, side, cfl);
  NestingReport rep;
  const double tol = s2.contact_tol;
  const std::size_t ns = g1.space_size();
  for (std::size_t j = 0; j < s1.v.slices(); ++j) {
    for (std::size_t i = 0; i < ns; ++i) {
      if (s1.v.on_boundary(j, i)) continue;
      const double a = std::abs(s1.v.at(j, i)), b = std::abs(s2.v.at(j, i));
      if ((a > tol && a <= 3.0 * tol) || (b > tol && b <= 3.0 * tol)) {
        ++rep.ambiguous;
        continue;
      }
      ++rep.compared;
      rep.mismatched += (a <= tol) != (b <= tol);
    }
  }
  rep.pass = rep.mismatched == 0;
  return rep;
}

}  // namespace homlab
