#pragma once

// Stationary random coefficient fields a(y, s, omega). A realization is a
// pure function of (seed, point): cell values come from a counter-based hash
// of the integer cell coordinates, so any region can be evaluated in any
// order without storing the field.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "homlab/errors.hpp"
#include "homlab/grid.hpp"

namespace homlab {

// ---------------------------------------------------------------------------
// Counter-based hashing

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double to_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

/// Seed for stream `stream`, member `index` of a master seed. Ensembles use
/// derive_seed(master, stream, i) for sample i so results do not depend on
/// evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return hash_combine(hash_combine(splitmix64(master), stream), index);
}

// ---------------------------------------------------------------------------

enum class EnvKind { constant, periodic, checkerboard_iid, checkerboard_mollified };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::constant: return "constant";
    case EnvKind::periodic: return "periodic";
    case EnvKind::checkerboard_iid: return "checkerboard_iid";
    case EnvKind::checkerboard_mollified: return "checkerboard_mollified";
  }
  return "?";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "constant") return EnvKind::constant;
  if (s == "periodic") return EnvKind::periodic;
  if (s == "checkerboard_iid") return EnvKind::checkerboard_iid;
  if (s == "checkerboard_mollified") return EnvKind::checkerboard_mollified;
  throw ConfigError("environment.kind", "unknown environment kind '" + s + "'");
}

/// Law of the coefficient field.
///
/// - constant: a == value.
/// - periodic: cells of size cell_x^d x cell_t carry table values; the table
///   is laid out as [time cell][space cells...] with period_x cells per
///   spatial axis and period_t cells in time (period_t = 1 gives a
///   time-independent field). Each sample draws a uniform phase over one
///   period.
/// - checkerboard_iid: each cell independently takes `high` with probability
///   p and `low` otherwise; each sample draws a uniform offset within one cell.
/// - checkerboard_mollified: the checkerboard averaged over a box of
///   half-width smoothing * cell per axis (smoothing in (0, 1/2]).
struct EnvSpec {
  EnvKind kind = EnvKind::constant;
  int d = 1;
  double value = 1.0;
  std::vector<double> table;
  int period_x = 1;
  int period_t = 1;
  double low = 1.0;
  double high = 2.0;
  double p = 0.5;
  double cell_x = 1.0;
  double cell_t = 1.0;
  double smoothing = 0.25;

  void validate() const {
    require(d >= 1 && d <= 3, "environment.d", "must be 1, 2 or 3");
    switch (kind) {
      case EnvKind::constant:
        require(value > 0.0 && std::isfinite(value), "environment.value", "must be positive");
        break;
      case EnvKind::periodic: {
        require(period_x >= 1 && period_t >= 1, "environment.period", "must be positive");
        std::size_t n = static_cast<std::size_t>(period_t);
        for (int a = 0; a < d; ++a) n *= static_cast<std::size_t>(period_x);
        require(table.size() == n, "environment.table",
                "expected " + std::to_string(n) + " entries");
        for (double v : table) require(v > 0.0 && std::isfinite(v), "environment.table",
                                       "entries must be positive");
        require(cell_x > 0.0 && cell_t > 0.0, "environment.cell_x", "cell sizes must be positive");
        break;
      }
      case EnvKind::checkerboard_mollified:
        require(smoothing > 0.0 && smoothing <= 0.5, "environment.smoothing",
                "must lie in (0, 0.5]");
        [[fallthrough]];
      case EnvKind::checkerboard_iid:
        require(low > 0.0 && high >= low && std::isfinite(high), "environment.low",
                "values must satisfy 0 < low <= high");
        require(p >= 0.0 && p <= 1.0, "environment.p", "must lie in [0, 1]");
        require(cell_x > 0.0 && cell_t > 0.0, "environment.cell_x", "cell sizes must be positive");
        break;
    }
  }

  double min_value() const {
    switch (kind) {
      case EnvKind::constant: return value;
      case EnvKind::periodic: return *std::min_element(table.begin(), table.end());
      default: return low;
    }
  }
  double max_value() const {
    switch (kind) {
      case EnvKind::constant: return value;
      case EnvKind::periodic: return *std::max_element(table.begin(), table.end());
      default: return high;
    }
  }
  bool is_constant() const { return kind == EnvKind::constant; }
  /// The values a piecewise-constant field can take; empty for the mollified
  /// kind, whose range is the interval [min_value, max_value].
  std::vector<double> attainable_values() const {
    switch (kind) {
      case EnvKind::constant: return {value};
      case EnvKind::periodic: return table;
      case EnvKind::checkerboard_iid: return {low, high};
      case EnvKind::checkerboard_mollified: return {};
    }
    return {};
  }
};

/// One realization omega, possibly translated.
class EnvSample {
 public:
  EnvSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> offset;  // d space components, then time
  std::vector<double> shift;   // accumulated translation, same layout

  int dim() const { return spec.d; }

  double eval(std::span<const double> y, double s) const {
    if (spec.kind == EnvKind::constant) return spec.value;
    double q[4];
    to_cell_coords(y, s, q);
    if (spec.kind == EnvKind::checkerboard_mollified) return mollified(q);
    std::int64_t c[4];
    for (int a = 0; a <= spec.d; ++a) c[a] = static_cast<std::int64_t>(std::floor(q[a]));
    return cell_value(std::span<const std::int64_t>(c, static_cast<std::size_t>(spec.d + 1)));
  }
  double eval(const SpaceTimePoint& p) const { return eval(p.x, p.t); }

  /// Value attached to integer cell `c` (space indices, then time index).
  /// For the mollified kind this is the underlying checkerboard value.
  double cell_value(std::span<const std::int64_t> c) const {
    switch (spec.kind) {
      case EnvKind::constant: return spec.value;
      case EnvKind::periodic: {
        auto wrap = [](std::int64_t i, int n) {
          const std::int64_t m = i % n;
          return static_cast<std::size_t>(m < 0 ? m + n : m);
        };
        std::size_t idx = wrap(c[static_cast<std::size_t>(spec.d)], spec.period_t);
        for (int a = spec.d - 1; a >= 0; --a) idx = idx * spec.period_x + wrap(c[a], spec.period_x);
        return spec.table[idx];
      }
      default: {
        std::uint64_t h = splitmix64(seed);
        for (int a = 0; a <= spec.d; ++a) h = hash_combine(h, static_cast<std::uint64_t>(c[a]));
        return to_unit(h) < spec.p ? spec.high : spec.low;
      }
    }
  }

  /// Index of the time cell containing s when the field is piecewise constant
  /// in time; nullopt when it varies continuously.
  std::optional<std::int64_t> time_piece(double s) const {
    switch (spec.kind) {
      case EnvKind::constant: return 0;
      case EnvKind::periodic:
        if (spec.period_t == 1) return 0;
        [[fallthrough]];
      case EnvKind::checkerboard_iid: {
        const std::size_t t = static_cast<std::size_t>(spec.d);
        return static_cast<std::int64_t>(std::floor((s + shift[t] + offset[t]) / spec.cell_t));
      }
      case EnvKind::checkerboard_mollified: return std::nullopt;
    }
    return std::nullopt;
  }

 private:
  void to_cell_coords(std::span<const double> y, double s, double* q) const {
    for (int a = 0; a < spec.d; ++a) {
      q[a] = (y[static_cast<std::size_t>(a)] + shift[a] + offset[a]) / spec.cell_x;
    }
    const std::size_t t = static_cast<std::size_t>(spec.d);
    q[t] = (s + shift[t] + offset[t]) / spec.cell_t;
  }

  // Exact box average of the checkerboard over [q - w, q + w] per axis
  // (cell units); at most two cells per axis since w <= 1/2.
  double mollified(const double* q) const {
    const int n = spec.d + 1;
    const double w = spec.smoothing;
    std::int64_t first[4];
    double frac[4][2];
    int count[4];
    for (int a = 0; a < n; ++a) {
      const double lo = q[a] - w, hi = q[a] + w;
      const double j0 = std::floor(lo);
      first[a] = static_cast<std::int64_t>(j0);
      if (std::floor(hi) > j0 && hi > j0 + 1.0) {
        count[a] = 2;
        frac[a][0] = (j0 + 1.0 - lo) / (2.0 * w);
        frac[a][1] = 1.0 - frac[a][0];
      } else {
        count[a] = 1;
        frac[a][0] = 1.0;
      }
    }
    double acc = 0.0;
    std::int64_t c[4];
    const int combos = 1 << n;
    for (int m = 0; m < combos; ++m) {
      double wt = 1.0;
      bool ok = true;
      for (int a = 0; a < n; ++a) {
        const int bit = (m >> a) & 1;
        if (bit >= count[a]) {
          ok = false;
          break;
        }
        c[a] = first[a] + bit;
        wt *= frac[a][bit];
      }
      if (!ok) continue;
      acc += wt * cell_value(std::span<const std::int64_t>(c, static_cast<std::size_t>(n)));
    }
    return std::clamp(acc, spec.low, spec.high);
  }
};

/// Realize omega for `seed`.
inline EnvSample sample_env(const EnvSpec& spec, std::uint64_t seed) {
  spec.validate();
  EnvSample e;
  e.spec = spec;
  e.seed = seed;
  const int n = spec.d + 1;
  e.offset.assign(static_cast<std::size_t>(n), 0.0);
  e.shift.assign(static_cast<std::size_t>(n), 0.0);
  if (spec.kind != EnvKind::constant) {
    const std::uint64_t salt = hash_combine(splitmix64(seed), 0x6f66667365740000ULL);  // "offset"
    for (int a = 0; a < n; ++a) {
      const double u = to_unit(hash_combine(salt, static_cast<std::uint64_t>(a)));
      double span_len = a < spec.d ? spec.cell_x : spec.cell_t;
      if (spec.kind == EnvKind::periodic) span_len *= a < spec.d ? spec.period_x : spec.period_t;
      e.offset[static_cast<std::size_t>(a)] = u * span_len;
    }
  }
  return e;
}

/// tau_{shift} omega: translated.eval(p) == env.eval(p + shift).
inline EnvSample translate(const EnvSample& env, const SpaceTimePoint& shift) {
  if (shift.dim() != env.dim()) throw ConfigError("shift", "dimension mismatch");
  for (double v : shift.x) require(std::isfinite(v), "shift", "must be finite");
  require(std::isfinite(shift.t), "shift", "must be finite");
  EnvSample out = env;
  for (int a = 0; a < env.dim(); ++a) out.shift[static_cast<std::size_t>(a)] += shift.x[static_cast<std::size_t>(a)];
  out.shift[static_cast<std::size_t>(env.dim())] += shift.t;
  return out;
}

/// Mean of a over the box lo <= y < hi, t_lo <= s < t_hi. Exact for the
/// piecewise-constant kinds; midpoint quadrature (16 points per cell and
/// axis) for the mollified kind.
inline double window_mean(const EnvSample& env, std::span<const double> lo,
                          std::span<const double> hi, double t_lo, double t_hi) {
  const EnvSpec& sp = env.spec;
  if (sp.kind == EnvKind::constant) return sp.value;
  const int n = sp.d + 1;
  double a[4], b[4], cell[4];
  for (int k = 0; k < sp.d; ++k) {
    a[k] = lo[static_cast<std::size_t>(k)];
    b[k] = hi[static_cast<std::size_t>(k)];
    cell[k] = sp.cell_x;
  }
  a[sp.d] = t_lo;
  b[sp.d] = t_hi;
  cell[sp.d] = sp.cell_t;
  if (sp.kind == EnvKind::checkerboard_mollified) {
    int m[4];
    long total = 1;
    for (int k = 0; k < n; ++k) {
      m[k] = std::max(1, static_cast<int>(std::ceil(16.0 * (b[k] - a[k]) / cell[k])));
      total *= m[k];
    }
    double acc = 0.0;
    double y[3];
    for (long idx = 0; idx < total; ++idx) {
      long r = idx;
      double s = 0.0;
      for (int k = 0; k < n; ++k) {
        const double coord = a[k] + (static_cast<double>(r % m[k]) + 0.5) * (b[k] - a[k]) / m[k];
        r /= m[k];
        if (k < sp.d) y[k] = coord; else s = coord;
      }
      acc += env.eval(std::span<const double>(y, static_cast<std::size_t>(sp.d)), s);
    }
    return acc / static_cast<double>(total);
  }
  // Piecewise constant: iterate over overlapped cells in shifted coordinates.
  std::int64_t c0[4], c1[4];
  double qa[4], qb[4];
  for (int k = 0; k < n; ++k) {
    qa[k] = (a[k] + env.shift[static_cast<std::size_t>(k)] + env.offset[static_cast<std::size_t>(k)]) / cell[k];
    qb[k] = (b[k] + env.shift[static_cast<std::size_t>(k)] + env.offset[static_cast<std::size_t>(k)]) / cell[k];
    c0[k] = static_cast<std::int64_t>(std::floor(qa[k]));
    c1[k] = static_cast<std::int64_t>(std::ceil(qb[k])) - 1;
  }
  double acc = 0.0;
  std::int64_t c[4];
  for (int k = 0; k < n; ++k) c[k] = c0[k];
  for (;;) {
    double wt = 1.0;
    for (int k = 0; k < n; ++k) {
      const double l = std::max(qa[k], static_cast<double>(c[k]));
      const double r = std::min(qb[k], static_cast<double>(c[k] + 1));
      wt *= std::max(0.0, r - l) / (qb[k] - qa[k]);
    }
    if (wt > 0.0) acc += wt * env.cell_value(std::span<const std::int64_t>(c, static_cast<std::size_t>(n)));
    int k = 0;
    while (k < n && ++c[k] > c1[k]) {
      c[k] = c0[k];
      ++k;
    }
    if (k == n) break;
  }
  return acc;
}

struct DecorrelationStats {
  double covariance = 0.0;  // signed empirical covariance
  double stderr_ = 0.0;     // standard error of the covariance estimate
  double value() const { return std::abs(covariance); }
};

/// Empirical Cov(f, g_r) where f is the mean of a over C_1 = (-1,1)^d x (-1,0]
/// and g_r the same functional on C_1 moved along the first axis so that the
/// two windows are a distance r apart (r = 0 means the same window).
inline DecorrelationStats decorrelation_stats(const EnvSpec& spec, double r, int n_samples,
                                              std::uint64_t seed) {
  require(n_samples >= 2, "n_samples", "need at least two samples");
  require(r >= 0.0, "r", "must be nonnegative");
  std::vector<double> lo(static_cast<std::size_t>(spec.d), -1.0), hi(static_cast<std::size_t>(spec.d), 1.0);
  std::vector<double> lo2 = lo, hi2 = hi;
  const double move = r > 0.0 ? 2.0 + r : 0.0;
  lo2[0] += move;
  hi2[0] += move;
  std::vector<double> f(static_cast<std::size_t>(n_samples)), g(f.size());
  for (int i = 0; i < n_samples; ++i) {
    const EnvSample env = sample_env(spec, derive_seed(seed, 0xdec0, static_cast<std::uint64_t>(i)));
    f[static_cast<std::size_t>(i)] = window_mean(env, lo, hi, -1.0, 0.0);
    g[static_cast<std::size_t>(i)] = window_mean(env, lo2, hi2, -1.0, 0.0);
  }
  const double n = n_samples;
  double mf = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    mf += f[i];
    mg += g[i];
  }
  mf /= n;
  mg /= n;
  double c = 0.0, c2 = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double z = (f[i] - mf) * (g[i] - mg);
    c += z;
    c2 += z * z;
  }
  DecorrelationStats out;
  out.covariance = c / (n - 1.0);
  const double mz = c / n;
  out.stderr_ = std::sqrt(std::max(0.0, c2 / n - mz * mz) / n);
  return out;
}

inline double decorrelation_estimate(const EnvSpec& spec, double r, int n_samples,
                                     std::uint64_t seed) {
  return decorrelation_stats(spec, r, n_samples, seed).value();
}

}  // namespace homlab
