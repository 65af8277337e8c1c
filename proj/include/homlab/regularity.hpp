#pragma once

// Spatial sup/inf convolutions of grid fields, semiconvexity checks and the
// separation of the two obstacle solutions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/moments.hpp"
#include "homlab/obstacle.hpp"
#include "homlab/operators.hpp"
#include "homlab/parallel.hpp"

namespace homlab {

struct Convolution {
  SpaceTimeField field;
  std::vector<std::size_t> argopt;  // per stored node: flat spatial index of the optimizer
  double theta = 0.0;
  bool sup = true;
};

namespace detail {

inline Convolution convolve_x(const SpaceTimeField& u, double theta, bool sup) {
  require(theta > 0.0 && std::isfinite(theta), "theta", "must be positive");
  const GridSpec& g = u.spec;
  const std::size_t ns = u.slice_size();
  std::vector<double> xs(ns * static_cast<std::size_t>(g.d));
  for (std::size_t i = 0; i < ns; ++i) g.coords(i, std::span<double>(xs.data() + i * g.d, static_cast<std::size_t>(g.d)));
  auto dist2 = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double e = xs[i * g.d + a] - xs[j * g.d + a];
      s += e * e;
    }
    return s;
  };
  Convolution c;
  c.theta = theta;
  c.sup = sup;
  c.field = u;
  c.argopt.assign(u.values.size(), 0);
  const double k = 1.0 / (2.0 * theta);
  [[maybe_unused]] const auto done = parallel_map<char>(u.slices(), [&](std::size_t j) {
    const auto src = u.slice(j);
    for (std::size_t i = 0; i < ns; ++i) {
      double best = sup ? -INFINITY : INFINITY;
      std::size_t arg = i;
      for (std::size_t y = 0; y < ns; ++y) {
        const double v = sup ? src[y] - k * dist2(i, y) : src[y] + k * dist2(i, y);
        if (sup ? v > best : v < best) {
          best = v;
          arg = y;
        }
      }
      c.field.values[j * ns + i] = best;
      c.argopt[j * ns + i] = arg;
    }
    return char{1};
  });
  return c;
}

}  // namespace detail

/// sup over grid nodes y of u(y, t) - |x - y|^2 / (2 theta), per time slice.
inline Convolution sup_convolution_x(const SpaceTimeField& u, double theta) {
  return detail::convolve_x(u, theta, true);
}

/// inf over grid nodes y of u(y, t) + |x - y|^2 / (2 theta), per time slice.
inline Convolution inf_convolution_x(const SpaceTimeField& u, double theta) {
  return detail::convolve_x(u, theta, false);
}

struct SemiconvexityReport {
  double bound = 0.0;         // (1/theta)(1 + h^2/theta)
  double worst = 0.0;         // min second difference (sup) or max (inf)
  std::size_t violations = 0;
  bool pass = false;
};

/// Axis second differences at nodes with both neighbours on the grid:
/// D2 >= -bound for a sup convolution (semiconvex), D2 <= bound for an inf
/// convolution (semiconcave).
inline SemiconvexityReport semiconvexity_check(const SpaceTimeField& u, double theta, bool sup = true) {
  require(theta > 0.0, "theta", "must be positive");
  const GridSpec& g = u.spec;
  SemiconvexityReport r;
  r.bound = (1.0 / theta) * (1.0 + g.h * g.h / theta);
  r.worst = sup ? INFINITY : -INFINITY;
  const double ih2 = 1.0 / (g.h * g.h);
  const long n0 = g.nodes(0), n1 = g.d > 1 ? g.nodes(1) : 1;
  for (std::size_t j = 0; j < u.slices(); ++j) {
    const auto s = u.slice(j);
    for (long i1 = 0; i1 < n1; ++i1) {
      for (long i0 = 0; i0 < n0; ++i0) {
        const std::size_t c = g.flat(i0, i1);
        auto test = [&](double d2) {
          r.worst = sup ? std::min(r.worst, d2) : std::max(r.worst, d2);
          if (sup ? d2 < -r.bound : d2 > r.bound) ++r.violations;
        };
        if (i0 > 0 && i0 + 1 < n0) test((s[g.flat(i0 + 1, i1)] - 2.0 * s[c] + s[g.flat(i0 - 1, i1)]) * ih2);
        if (g.d > 1 && i1 > 0 && i1 + 1 < n1) test((s[g.flat(i0, i1 + 1)] - 2.0 * s[c] + s[g.flat(i0, i1 - 1)]) * ih2);
      }
    }
  }
  r.pass = r.violations == 0;
  return r;
}

inline SemiconvexityReport semiconvexity_check(const Convolution& c) {
  return semiconvexity_check(c.field, c.theta, c.sup);
}

struct DisplacementReport {
  double max_ratio = 0.0;  // max |x - x*| / (2 theta Lip) over nodes
  bool pass = false;
};

/// |x - x*| <= 2 theta Lip(u(., t)) with the pairwise discrete Lipschitz
/// constant of each slice.
inline DisplacementReport displacement_check(const SpaceTimeField& u, const Convolution& c) {
  const GridSpec& g = u.spec;
  const std::size_t ns = u.slice_size();
  std::vector<double> xs(ns * static_cast<std::size_t>(g.d));
  for (std::size_t i = 0; i < ns; ++i) g.coords(i, std::span<double>(xs.data() + i * g.d, static_cast<std::size_t>(g.d)));
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (int a = 0; a < g.d; ++a) {
      const double e = xs[i * g.d + a] - xs[j * g.d + a];
      s += e * e;
    }
    return std::sqrt(s);
  };
  DisplacementReport r;
  r.pass = true;
  for (std::size_t j = 0; j < u.slices(); ++j) {
    const auto s = u.slice(j);
    double lip = 0.0;
    for (std::size_t a = 0; a < ns; ++a) {
      for (std::size_t b = a + 1; b < ns; ++b) lip = std::max(lip, std::abs(s[a] - s[b]) / dist(a, b));
    }
    for (std::size_t i = 0; i < ns; ++i) {
      const double disp = dist(i, c.argopt[j * ns + i]);
      const double allowed = 2.0 * c.theta * lip;
      if (disp > allowed * (1.0 + 1e-12) + 1e-12) r.pass = false;
      if (allowed > 0.0) r.max_ratio = std::max(r.max_ratio, disp / allowed);
    }
  }
  return r;
}

struct SeparationReport {
  double min_all = 0.0;           // min of v_above - v_below over all nodes
  double min_h_interior = 0.0;    // min over the interior region
  double mass_above = 0.0, mass_below = 0.0;
  double theta_mass = 0.0;
  bool nonnegative = false;       // min_all >= -1e-12
  bool positivity_asserted = false;
  bool positive = false;
  bool pass = false;
};

/// h = v_above - v_below for the obstacle problems with `op` (pass
/// op.shifted(M) for F_M) on g. The interior region is the part of the domain
/// within 2/3 of its spatial half-widths of the centre and in the top 2/3 of
/// its time extent. Positivity is asserted when both normalized masses are at
/// least theta_mass.
inline SeparationReport separation_check(const OperatorSpec& op, const EnvSample* env, double ell, double eps,
                                         const GridSpec& g, double theta_mass = 1e-3, double cfl = 0.9) {
  const auto up = solve_obstacle(op, env, ell, eps, g, Side::above, cfl);
  const auto dn = solve_obstacle(op, env, ell, eps, g, Side::below, cfl);
  SeparationReport r;
  r.theta_mass = theta_mass;
  EnvSpec unit;
  unit.d = g.d;
  const double scale = mass_scale(op, env ? env->spec : unit, SymMatrix::zero(g.d), ell);
  r.mass_above = contact_stats(up, op, env, ell, eps, scale).mass;
  r.mass_below = contact_stats(dn, op, env, ell, eps, scale).mass;
  const ParabolicDomain& D = g.domain;
  const std::size_t ns = up.v.slice_size();
  std::vector<double> x(static_cast<std::size_t>(g.d));
  r.min_all = INFINITY;
  r.min_h_interior = INFINITY;
  for (std::size_t j = 0; j < up.v.slices(); ++j) {
    const double t = g.t(up.v.steps[j]);
    const bool late = t >= D.t_hi - (2.0 / 3.0) * D.duration() - 1e-12;
    for (std::size_t i = 0; i < ns; ++i) {
      const double hval = up.v.at(j, i) - dn.v.at(j, i);
      r.min_all = std::min(r.min_all, hval);
      if (!late || j == 0) continue;
      g.coords(i, x);
      bool inside = true;
      for (int a = 0; a < g.d; ++a) {
        const double c = 0.5 * (D.lo[a] + D.hi[a]), w = 0.5 * (D.hi[a] - D.lo[a]);
        inside = inside && std::abs(x[a] - c) <= (2.0 / 3.0) * w + 1e-12;
      }
      if (inside && !g.lateral(i)) r.min_h_interior = std::min(r.min_h_interior, hval);
    }
  }
  r.nonnegative = r.min_all >= -1e-12;
  r.positivity_asserted = r.mass_above >= theta_mass && r.mass_below >= theta_mass;
  r.positive = r.min_h_interior > 0.0;
  r.pass = r.nonnegative && (!r.positivity_asserted || r.positive);
  return r;
}

}  // namespace homlab
