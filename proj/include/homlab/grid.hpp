#pragma once

// Parabolic space-time geometry: points, cylinders and cubes, node-centred
// grids and grid functions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "homlab/errors.hpp"

namespace homlab {

struct SpaceTimePoint {
  std::vector<double> x;
  double t = 0.0;

  int dim() const { return static_cast<int>(x.size()); }
};

/// (|x1 - x2|^2 + |t1 - t2|)^(1/2)
inline double parabolic_distance(const SpaceTimePoint& p1, const SpaceTimePoint& p2) {
  if (p1.dim() != p2.dim()) {
    throw ConfigError("dimension", "parabolic_distance between points of dimension " +
                                       std::to_string(p1.dim()) + " and " +
                                       std::to_string(p2.dim()));
  }
  double sq = 0.0;
  for (int i = 0; i < p1.dim(); ++i) {
    const double dx = p1.x[i] - p2.x[i];
    sq += dx * dx;
  }
  return std::sqrt(sq + std::abs(p1.t - p2.t));
}

enum class DomainKind { cylinder, cube, forward_cylinder, box };

/// A space-time region. The three standard kinds are
///   cylinder  Q_r(x,t)  = B_r(x) x (t - r^2, t]
///   cube      C_r(x,t)  = (x - r, x + r)^d x (t - r^2, t]
///   forward   Q+_r(x,t) = B_r(x) x (t, t + r^2]
/// and `box` is an arbitrary axis-aligned (lo, hi) x (t_lo, t_hi].
/// The parabolic boundary is the bottom slice plus the lateral sides; the top
/// slice belongs to the interior.
class ParabolicDomain {
 public:
  DomainKind kind = DomainKind::cube;
  SpaceTimePoint center;
  double radius = 0.0;
  std::vector<double> lo, hi;  // spatial bounding box
  double t_lo = 0.0, t_hi = 0.0;
  double extent = 0.0;  // time length, kept exactly (r^2 for the standard kinds)

  int dim() const { return static_cast<int>(lo.size()); }
  double duration() const { return extent; }
  bool is_ball() const {
    return kind == DomainKind::cylinder || kind == DomainKind::forward_cylinder;
  }

  double spatial_volume() const {
    if (is_ball()) {
      return dim() == 1 ? 2.0 * radius : std::numbers::pi * radius * radius;
    }
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
    return v;
  }
  double volume() const { return spatial_volume() * duration(); }

  /// Lateral-boundary test for a grid node with spacing h: nodes within h/2
  /// of the lateral boundary (or outside the ball) count as boundary.
  bool near_lateral_boundary(std::span<const double> x, double h) const {
    if (is_ball() && dim() > 1) {
      double sq = 0.0;
      for (int i = 0; i < dim(); ++i) sq += (x[i] - center.x[i]) * (x[i] - center.x[i]);
      return std::sqrt(sq) >= radius - 0.5 * h;
    }
    for (int i = 0; i < dim(); ++i) {
      if (x[i] <= lo[i] + 0.5 * h || x[i] >= hi[i] - 0.5 * h) return true;
    }
    return false;
  }
};

inline ParabolicDomain make_domain(DomainKind kind, const SpaceTimePoint& center, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("radius", "must be positive and finite");
  if (center.dim() < 1) throw ConfigError("dimension", "d must be at least 1");
  if (kind == DomainKind::box) throw ConfigError("kind", "use make_box for box domains");
  ParabolicDomain D;
  D.kind = kind;
  D.center = center;
  D.radius = r;
  for (double c : center.x) {
    D.lo.push_back(c - r);
    D.hi.push_back(c + r);
  }
  if (kind == DomainKind::forward_cylinder) {
    D.t_lo = center.t;
    D.t_hi = center.t + r * r;
  } else {
    D.t_lo = center.t - r * r;
    D.t_hi = center.t;
  }
  D.extent = r * r;
  return D;
}

inline ParabolicDomain make_box(std::vector<double> lo, std::vector<double> hi, double t_lo,
                                double t_hi) {
  if (lo.empty() || lo.size() != hi.size()) throw ConfigError("box", "bad spatial bounds");
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(hi[i] > lo[i])) throw ConfigError("box", "empty spatial extent");
  }
  if (!(t_hi > t_lo)) throw ConfigError("box", "empty time extent");
  ParabolicDomain D;
  D.kind = DomainKind::box;
  D.center.t = t_hi;
  for (std::size_t i = 0; i < lo.size(); ++i) D.center.x.push_back(0.5 * (lo[i] + hi[i]));
  D.lo = std::move(lo);
  D.hi = std::move(hi);
  D.t_lo = t_lo;
  D.t_hi = t_hi;
  D.extent = t_hi - t_lo;
  return D;
}

/// Same spatial region, different time window.
inline ParabolicDomain with_time_window(ParabolicDomain D, double t_lo, double t_hi) {
  if (!(t_hi > t_lo)) throw ConfigError("time_window", "empty time extent");
  D.t_lo = t_lo;
  D.t_hi = t_hi;
  D.extent = t_hi - t_lo;
  D.center.t = t_hi;
  return D;
}

/// Uniform node-centred grid on a domain's bounding box. `h` and `dt` given
/// to `make` are upper bounds: the grid uses the largest steps not exceeding
/// them that tile the box exactly.
class GridSpec {
 public:
  int d = 1;
  double h = 0.0;
  double dt = 0.0;
  ParabolicDomain domain;

  static GridSpec make(const ParabolicDomain& domain, double h_max, double dt_max) {
    if (!(h_max > 0.0) || !std::isfinite(h_max)) throw ConfigError("h", "must be positive");
    if (!(dt_max > 0.0) || !std::isfinite(dt_max)) throw ConfigError("dt", "must be positive");
    if (domain.dim() < 1 || domain.dim() > 2) {
      throw ConfigError("d", "only d = 1 and d = 2 grids are supported");
    }
    GridSpec g;
    g.d = domain.dim();
    g.domain = domain;
    const double w0 = domain.hi[0] - domain.lo[0];
    const long n0 = std::max(2L, static_cast<long>(std::ceil(w0 / h_max - 1e-9)));
    g.h = w0 / static_cast<double>(n0);
    g.n_.push_back(n0);
    for (int a = 1; a < g.d; ++a) {
      const double w = domain.hi[a] - domain.lo[a];
      const long na = std::lround(w / g.h);
      if (na < 2 || std::abs(na * g.h - w) > 1e-9 * w) {
        throw ConfigError("h", "spatial extents must be commensurate across axes");
      }
      g.n_.push_back(na);
    }
    const long nt = std::max(1L, static_cast<long>(std::ceil(domain.duration() / dt_max - 1e-9)));
    g.nt_ = nt;
    g.dt = domain.duration() / static_cast<double>(nt);
    g.build_mask();
    return g;
  }

  /// Number of intervals along spatial axis `a` (nodes = n + 1).
  long n(int a) const { return n_[a]; }
  long nodes(int a) const { return n_[a] + 1; }
  /// Number of time steps (time nodes = nt + 1).
  long nt() const { return nt_; }
  std::size_t space_size() const {
    std::size_t s = 1;
    for (long v : n_) s *= static_cast<std::size_t>(v + 1);
    return s;
  }
  double x(int a, long i) const { return domain.lo[a] + static_cast<double>(i) * h; }
  double t(long step) const { return domain.t_lo + static_cast<double>(step) * dt; }

  /// Flat index -> spatial coordinates.
  void coords(std::size_t flat, std::span<double> out) const {
    for (int a = 0; a < d; ++a) {
      const auto na = static_cast<std::size_t>(n_[a] + 1);
      out[a] = x(a, static_cast<long>(flat % na));
      flat /= na;
    }
  }
  std::size_t flat(long i0, long i1 = 0) const {
    return static_cast<std::size_t>(i0) + static_cast<std::size_t>(n_[0] + 1) *
                                              static_cast<std::size_t>(i1);
  }
  bool lateral(std::size_t flat) const { return lateral_[flat] != 0; }
  const std::vector<char>& lateral_mask() const { return lateral_; }
  std::size_t interior_count() const {
    return static_cast<std::size_t>(std::count(lateral_.begin(), lateral_.end(), 0));
  }
  /// Quadrature weight per interior node, chosen so that the interior nodes
  /// of all time levels above the bottom sum to |domain|.
  double node_weight() const {
    return domain.volume() / (static_cast<double>(interior_count()) * static_cast<double>(nt_));
  }

 private:
  std::vector<long> n_;
  long nt_ = 0;
  std::vector<char> lateral_;

  void build_mask() {
    lateral_.assign(space_size(), 0);
    double xs[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < lateral_.size(); ++i) {
      coords(i, std::span<double>(xs, static_cast<std::size_t>(d)));
      lateral_[i] = domain.near_lateral_boundary(std::span<const double>(xs, d), h) ? 1 : 0;
    }
  }
};

/// Grid function on stored time levels. `steps[j]` is the solver step index of
/// stored slice j; slice 0 of a full solve is the bottom of the domain.
struct SpaceTimeField {
  GridSpec spec;
  std::vector<long> steps;
  std::vector<double> values;

  std::size_t slice_size() const { return spec.space_size(); }
  std::size_t slices() const { return steps.size(); }
  std::span<const double> slice(std::size_t j) const {
    return {values.data() + j * slice_size(), slice_size()};
  }
  std::span<double> slice(std::size_t j) { return {values.data() + j * slice_size(), slice_size()}; }
  double time(std::size_t j) const { return spec.t(steps[j]); }
  double at(std::size_t j, std::size_t i) const { return values[j * slice_size() + i]; }
  double& at(std::size_t j, std::size_t i) { return values[j * slice_size() + i]; }
  bool on_boundary(std::size_t j, std::size_t i) const {
    return steps[j] == 0 || spec.lateral(i);
  }
  std::vector<char> boundary_mask() const {
    std::vector<char> m(values.size());
    for (std::size_t j = 0; j < slices(); ++j) {
      for (std::size_t i = 0; i < slice_size(); ++i) m[j * slice_size() + i] = on_boundary(j, i);
    }
    return m;
  }
  SpaceTimePoint point(std::size_t j, std::size_t i) const {
    SpaceTimePoint p;
    p.x.resize(static_cast<std::size_t>(spec.d));
    spec.coords(i, p.x);
    p.t = time(j);
    return p;
  }

  /// Field sampled from f(x, t) at every time level of the grid.
  static SpaceTimeField from_function(const GridSpec& g,
                                      const std::function<double(std::span<const double>, double)>& f) {
    SpaceTimeField u;
    u.spec = g;
    const std::size_t ns = g.space_size();
    u.steps.resize(static_cast<std::size_t>(g.nt() + 1));
    u.values.resize(u.steps.size() * ns);
    double xs[2] = {0.0, 0.0};
    for (std::size_t j = 0; j < u.steps.size(); ++j) {
      u.steps[j] = static_cast<long>(j);
      for (std::size_t i = 0; i < ns; ++i) {
        g.coords(i, std::span<double>(xs, static_cast<std::size_t>(g.d)));
        u.values[j * ns + i] = f(std::span<const double>(xs, g.d), g.t(u.steps[j]));
      }
    }
    return u;
  }
};

inline double sup_norm(const SpaceTimeField& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::abs(v));
  return m;
}

/// Parabolic Hoelder seminorm max |f(p1) - f(p2)| / d(p1, p2)^alpha over
/// distinct node pairs. When `max_pairs` is nonzero and smaller than the number
/// of pairs, that many pairs are drawn at random from `seed`.
inline double holder_seminorm(const SpaceTimeField& f, double alpha, std::size_t max_pairs = 0,
                              std::uint64_t seed = 0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
  const std::size_t ns = f.slice_size();
  const std::size_t total = f.values.size();
  const int d = f.spec.d;
  std::vector<double> xs(static_cast<std::size_t>(d) * ns);
  for (std::size_t i = 0; i < ns; ++i) {
    f.spec.coords(i, std::span<double>(xs.data() + i * d, static_cast<std::size_t>(d)));
  }
  auto quotient = [&](std::size_t a, std::size_t b) {
    const std::size_t ja = a / ns, ia = a % ns, jb = b / ns, ib = b % ns;
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
      const double dx = xs[ia * d + k] - xs[ib * d + k];
      sq += dx * dx;
    }
    const double dist = std::sqrt(sq + std::abs(f.time(ja) - f.time(jb)));
    if (dist == 0.0) return 0.0;
    return std::abs(f.values[a] - f.values[b]) / std::pow(dist, alpha);
  };
  double best = 0.0;
  const double n_pairs = 0.5 * static_cast<double>(total) * static_cast<double>(total - 1);
  if (max_pairs == 0 || n_pairs <= static_cast<double>(max_pairs)) {
    for (std::size_t a = 0; a < total; ++a) {
      for (std::size_t b = a + 1; b < total; ++b) best = std::max(best, quotient(a, b));
    }
    return best;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t k = 0; k < max_pairs; ++k) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a != b) best = std::max(best, quotient(a, b));
  }
  return best;
}

}  // namespace homlab
