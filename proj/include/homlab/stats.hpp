#pragma once

// Small descriptive statistics used by the Monte Carlo drivers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "homlab/errors.hpp"

namespace homlab {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw ConfigError("samples", "mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Unbiased sample variance (0 for a single sample).
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double std_error(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt(variance(v) / static_cast<double>(v.size()));
}

/// Linear-interpolation quantile (type 7), q in [0, 1].
inline double quantile(std::span<const double> v, double q) {
  if (v.empty()) throw ConfigError("samples", "quantile of an empty sample");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Bootstrap standard error of quantile q with B resamples from `seed`.
inline double bootstrap_quantile_stderr(std::span<const double> v, double q, int B,
                                        std::uint64_t seed) {
  if (v.size() < 2) return 0.0;
  std::mt19937_64 rng(seed);
  std::vector<double> reps(static_cast<std::size_t>(B)), draw(v.size());
  for (int b = 0; b < B; ++b) {
    for (double& x : draw) x = v[static_cast<std::size_t>(rng() % v.size())];
    reps[static_cast<std::size_t>(b)] = quantile(draw, q);
  }
  return std::sqrt(variance(reps));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Least-squares line through (x_i, y_i).
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("fit", "need at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  LinearFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace homlab
