#pragma once

// Symmetric matrices, Pucci extremal operators and the closed family of
// uniformly elliptic operators F(M, y, s, omega) used throughout the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"

namespace homlab {

/// d x d symmetric matrix, d in {1, 2}. Only the upper triangle is stored.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int d) : d_(d) {
    if (d < 1 || d > 2) throw ConfigError("M", "only 1x1 and 2x2 matrices are supported");
  }

  static SymMatrix scalar(double m) {
    SymMatrix M(1);
    M.a_ = m;
    return M;
  }
  static SymMatrix of(double m00, double m01, double m11) {
    SymMatrix M(2);
    M.a_ = m00;
    M.b_ = m01;
    M.c_ = m11;
    return M;
  }
  static SymMatrix identity(int d) {
    SymMatrix M(d);
    M.a_ = 1.0;
    M.c_ = d == 2 ? 1.0 : 0.0;
    return M;
  }
  static SymMatrix zero(int d) { return SymMatrix(d); }

  int dim() const { return d_; }
  double operator()(int i, int j) const {
    if (i == 0 && j == 0) return a_;
    if (i == 1 && j == 1) return c_;
    return b_;
  }
  double trace() const { return d_ == 1 ? a_ : a_ + c_; }

  /// Eigenvalues in ascending order (closed form); the second entry equals
  /// the first when d = 1.
  std::array<double, 2> eigenvalues() const {
    if (d_ == 1) return {a_, a_};
    const double mean = 0.5 * (a_ + c_);
    const double half = 0.5 * (a_ - c_);
    const double r = std::hypot(half, b_);
    return {mean - r, mean + r};
  }
  double max_eigenvalue() const { return eigenvalues()[1]; }
  double min_eigenvalue() const { return eigenvalues()[0]; }
  /// Spectral norm.
  double norm() const {
    const auto e = eigenvalues();
    return std::max(std::abs(e[0]), std::abs(e[1]));
  }
  /// v^T M v for a unit direction v (ignored components when d = 1).
  double directional(double v0, double v1) const {
    if (d_ == 1) return a_ * v0 * v0;
    return a_ * v0 * v0 + 2.0 * b_ * v0 * v1 + c_ * v1 * v1;
  }

  SymMatrix operator+(const SymMatrix& o) const {
    check_same(o);
    SymMatrix r(d_);
    r.a_ = a_ + o.a_;
    r.b_ = b_ + o.b_;
    r.c_ = c_ + o.c_;
    return r;
  }
  SymMatrix operator-(const SymMatrix& o) const { return *this + o * -1.0; }
  SymMatrix operator*(double s) const {
    SymMatrix r(d_);
    r.a_ = a_ * s;
    r.b_ = b_ * s;
    r.c_ = c_ * s;
    return r;
  }
  bool operator==(const SymMatrix&) const = default;

 private:
  int d_ = 1;
  double a_ = 0.0, b_ = 0.0, c_ = 0.0;

  void check_same(const SymMatrix& o) const {
    if (o.d_ != d_) throw ConfigError("M", "matrix dimension mismatch");
  }
};

namespace detail {
inline void check_constants(double lambda, double Lambda) {
  if (!(lambda > 0.0) || !(Lambda >= lambda) || !std::isfinite(Lambda)) {
    throw ConfigError("lambda", "ellipticity constants must satisfy 0 < lambda <= Lambda");
  }
}
}  // namespace detail

/// Scalar Pucci profile: Lambda e for e > 0, lambda e otherwise.
inline double pucci_plus_scalar(double e, double lambda, double Lambda) {
  return e > 0.0 ? Lambda * e : lambda * e;
}
inline double pucci_minus_scalar(double e, double lambda, double Lambda) {
  return e > 0.0 ? lambda * e : Lambda * e;
}

inline double pucci_plus(const SymMatrix& M, double lambda, double Lambda) {
  detail::check_constants(lambda, Lambda);
  const auto e = M.eigenvalues();
  double s = pucci_plus_scalar(e[0], lambda, Lambda);
  if (M.dim() == 2) s += pucci_plus_scalar(e[1], lambda, Lambda);
  return s;
}

inline double pucci_minus(const SymMatrix& M, double lambda, double Lambda) {
  detail::check_constants(lambda, Lambda);
  const auto e = M.eigenvalues();
  double s = pucci_minus_scalar(e[0], lambda, Lambda);
  if (M.dim() == 2) s += pucci_minus_scalar(e[1], lambda, Lambda);
  return s;
}

enum class BaseKind { pucci_plus, pucci_minus, linear_trace };

inline std::string to_string(BaseKind k) {
  switch (k) {
    case BaseKind::pucci_plus: return "pucci_plus";
    case BaseKind::pucci_minus: return "pucci_minus";
    case BaseKind::linear_trace: return "linear_trace";
  }
  return "?";
}

inline BaseKind base_kind_from_string(const std::string& s) {
  if (s == "pucci_plus") return BaseKind::pucci_plus;
  if (s == "pucci_minus") return BaseKind::pucci_minus;
  if (s == "linear_trace") return BaseKind::linear_trace;
  throw ConfigError("operator.base", "unknown operator kind '" + s + "'");
}

/// One member of the operator family. A modulated operator is
/// a(y, s) * base(M + shift) with a read from an environment sample.
struct OperatorSpec {
  BaseKind base = BaseKind::linear_trace;
  bool modulated = false;
  double lambda = 1.0;
  double Lambda = 1.0;
  std::optional<SymMatrix> shift;

  void validate() const { detail::check_constants(lambda, Lambda); }

  /// F_M: the same operator evaluated at (. + M).
  OperatorSpec shifted(const SymMatrix& M) const {
    OperatorSpec s = *this;
    s.shift = shift ? *shift + M : M;
    return s;
  }

  /// base(M), ignoring shift and modulation.
  double base_value(const SymMatrix& M) const {
    switch (base) {
      case BaseKind::pucci_plus: return pucci_plus(M, lambda, Lambda);
      case BaseKind::pucci_minus: return pucci_minus(M, lambda, Lambda);
      case BaseKind::linear_trace: return M.trace();
    }
    return 0.0;
  }

  /// The scalar profile used by the stencils (one eigenvalue at a time).
  double profile(double e) const {
    switch (base) {
      case BaseKind::pucci_plus: return pucci_plus_scalar(e, lambda, Lambda);
      case BaseKind::pucci_minus: return pucci_minus_scalar(e, lambda, Lambda);
      case BaseKind::linear_trace: return e;
    }
    return 0.0;
  }

  /// Largest slope of the scalar profile; bounds the stencil's centre weight.
  double profile_slope() const { return base == BaseKind::linear_trace ? 1.0 : Lambda; }

  /// Constants (lower, upper) with lower ||N|| <= base(M+N) - base(M) <= upper ||N||
  /// for N >= 0 and ||N|| the largest eigenvalue of N.
  std::pair<double, double> base_ellipticity(int d) const {
    if (base == BaseKind::linear_trace) return {1.0, static_cast<double>(d)};
    return {lambda, static_cast<double>(d) * Lambda};
  }
};

/// F(M, p) = a(p) base(M + shift) for modulated operators, base(M + shift)
/// otherwise. `p` is the point at which the environment is read.
inline double eval_F(const OperatorSpec& spec, const SymMatrix& M, const SpaceTimePoint& p,
                     const EnvSample* env) {
  const SymMatrix total = spec.shift ? M + *spec.shift : M;
  const double b = spec.base_value(total);
  if (!spec.modulated) return b;
  if (env == nullptr) throw ConfigError("environment", "modulated operator needs an environment");
  return env->eval(p.x, p.t) * b;
}

struct EllipticityReport {
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  bool pass = false;
};

/// Random (M, N >= 0, p) probes of lower ||N|| <= F(M+N,p) - F(M,p) <= upper ||N||.
/// `f(M, p)` may be any operator; the shipped ones go through the overload below.
template <class Op>
EllipticityReport check_uniform_ellipticity(Op&& f, int d, double lower, double upper,
                                            int samples, std::uint64_t seed) {
  if (samples <= 0) throw ConfigError("samples", "must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> entry(-5.0, 5.0);
  std::uniform_real_distribution<double> log_scale(std::log(1e-2), std::log(1e2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  EllipticityReport rep;
  rep.min_ratio = INFINITY;
  rep.max_ratio = -INFINITY;
  for (int k = 0; k < samples; ++k) {
    SymMatrix M, N;
    SpaceTimePoint p;
    p.x.resize(static_cast<std::size_t>(d));
    for (auto& v : p.x) v = entry(rng);
    p.t = -std::abs(entry(rng));
    const double top = std::exp(log_scale(rng));
    if (d == 1) {
      M = SymMatrix::scalar(entry(rng));
      N = SymMatrix::scalar(top);
    } else {
      M = SymMatrix::of(entry(rng), entry(rng), entry(rng));
      const double th = angle(rng), c = std::cos(th), s = std::sin(th);
      const double low = top * unit(rng);
      N = SymMatrix::of(top * c * c + low * s * s, (top - low) * c * s, top * s * s + low * c * c);
    }
    const double ratio = (f(M + N, p) - f(M, p)) / N.max_eigenvalue();
    rep.min_ratio = std::min(rep.min_ratio, ratio);
    rep.max_ratio = std::max(rep.max_ratio, ratio);
  }
  const double slack = 1e-9 * std::max(1.0, upper);
  rep.pass = rep.min_ratio >= lower - slack && rep.max_ratio <= upper + slack;
  return rep;
}

/// (F3) constants of a shipped operator, scaled by the coefficient range when
/// the operator is modulated.
inline std::pair<double, double> effective_ellipticity(const OperatorSpec& spec, int d,
                                                       const EnvSample* env) {
  auto [lo, hi] = spec.base_ellipticity(d);
  if (spec.modulated) {
    if (env == nullptr) throw ConfigError("environment", "modulated operator needs an environment");
    lo *= env->spec.min_value();
    hi *= env->spec.max_value();
  }
  return {lo, hi};
}

inline EllipticityReport check_uniform_ellipticity(const OperatorSpec& spec, int d, int samples,
                                                   std::uint64_t seed,
                                                   const EnvSample* env = nullptr) {
  spec.validate();
  const auto [lo, hi] = effective_ellipticity(spec, d, env);
  return check_uniform_ellipticity(
      [&](const SymMatrix& M, const SpaceTimePoint& p) { return eval_F(spec, M, p, env); }, d, lo,
      hi, samples, seed);
}

}  // namespace homlab
