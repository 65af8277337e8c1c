#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homlab/solver.hpp"

using namespace homlab;

namespace {

constexpr double pi = std::numbers::pi;

ParabolicDomain C1(int d = 1) {
  SpaceTimePoint c;
  c.x.assign(static_cast<std::size_t>(d), 0.0);
  return make_domain(DomainKind::cube, c, 1.0);
}

OperatorSpec op(BaseKind b, double lambda = 1.0, double Lambda = 2.0) {
  OperatorSpec s;
  s.base = b;
  s.lambda = lambda;
  s.Lambda = Lambda;
  return s;
}

EnvSample checker(int d, std::uint64_t seed) {
  EnvSpec s;
  s.kind = EnvKind::checkerboard_iid;
  s.d = d;
  return sample_env(s, seed);
}

double max_abs_diff(const SpaceTimeField& a, const SpaceTimeField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST(SolveParabolic, HeatEquationOracle) {
  const auto L = op(BaseKind::linear_trace);
  const auto g = make_grid(C1(), 1.0 / 128, L, nullptr);
  SolveConfig cfg;
  cfg.boundary = [](std::span<const double> x, double t) {
    return t <= -1.0 + 1e-12 ? std::sin(pi * (x[0] + 1) / 2) : 0.0;
  };
  const auto u = solve_parabolic(L, nullptr, cfg, g);
  const std::size_t top = u.slices() - 1;
  double err = 0.0;
  for (std::size_t i = 0; i < u.slice_size(); ++i) {
    const double x = g.x(0, static_cast<long>(i));
    err = std::max(err, std::abs(u.at(top, i) - std::exp(-pi * pi / 4) * std::sin(pi * (x + 1) / 2)));
  }
  EXPECT_LE(err, 1e-2);
}

TEST(SolveParabolic, SecondOrderInSpace) {
  // Manufactured u = exp(-t) cos(x) + x^2 t for u_t - u_xx = f.
  auto exact = [](double x, double t) { return std::exp(-t) * std::cos(x) + x * x * t; };
  std::vector<double> errs;
  for (double h : {0.1, 0.05}) {
    const auto L = op(BaseKind::linear_trace);
    const auto D = make_box({-1.0}, {1.0}, 0.0, 0.5);
    const auto g = GridSpec::make(D, h, 0.01 * h * h);
    SolveConfig cfg;
    cfg.boundary = [&](std::span<const double> x, double t) { return exact(x[0], t); };
    cfg.rhs = [](std::span<const double> x, double t) { return x[0] * x[0] - 2 * t; };
    cfg.store_stride = 0;
    const auto u = solve_parabolic(L, nullptr, cfg, g);
    double err = 0.0;
    for (std::size_t i = 0; i < u.slice_size(); ++i) err = std::max(err, std::abs(u.at(1, i) - exact(g.x(0, static_cast<long>(i)), 0.5)));
    errs.push_back(err);
  }
  EXPECT_GE(errs[0] / errs[1], 3.0);
}

TEST(SolveParabolic, ConstantsAndLinearDataArePreserved) {
  for (int d : {1, 2}) {
    for (auto b : {BaseKind::pucci_plus, BaseKind::pucci_minus, BaseKind::linear_trace}) {
      auto F = op(b);
      F.modulated = true;
      const auto env = checker(d, 3);
      const auto g = make_grid(C1(d), 1.0 / 8, F, &env, 0.9, 1.0 / 8);
      SolveConfig cfg;
      cfg.boundary = [](auto, double) { return 2.5; };
      const auto u = solve_parabolic(F, &env, cfg, g);
      for (double v : u.values) EXPECT_EQ(v, 2.5);
      cfg.boundary = [](std::span<const double> x, double) { return 0.5 + 2.0 * x[0] - (x.size() > 1 ? x[1] : 0.0); };
      const auto w = solve_parabolic(F, &env, cfg, g);
      for (std::size_t j = 0; j < w.slices(); ++j)
        for (std::size_t i = 0; i < w.slice_size(); ++i) {
          const auto p = w.point(j, i);
          EXPECT_NEAR(w.at(j, i), 0.5 + 2.0 * p.x[0] - (d > 1 ? p.x[1] : 0.0), 1e-12);
        }
    }
  }
}

TEST(SolveParabolic, RejectsCflViolationNamingDt) {
  const auto L = op(BaseKind::pucci_plus);
  const auto g = GridSpec::make(C1(), 0.1, 0.01);
  try {
    solve_parabolic(L, nullptr, SolveConfig{}, g);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "dt");
  }
}

TEST(SolveParabolic, RejectsUnresolvedMedium) {
  auto F = op(BaseKind::linear_trace);
  F.modulated = true;
  const auto env = checker(1, 1);
  const auto g = make_grid(C1(), 0.25, F, &env);
  SolveConfig cfg;
  cfg.eps = 0.5;
  try {
    solve_parabolic(F, &env, cfg, g);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "h");
  }
}

TEST(SolveParabolic, NanAbortsWithStep) {
  const auto L = op(BaseKind::linear_trace);
  const auto g = make_grid(C1(), 0.25, L, nullptr);
  SolveConfig cfg;
  cfg.rhs = [](auto, double t) { return t > -0.5 ? std::nan("") : 0.0; };
  try {
    solve_parabolic(L, nullptr, cfg, g);
    FAIL();
  } catch (const SolveError& e) {
    EXPECT_EQ(e.key(), "nan");
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Corrector, ZeroAtCriticalEll) {
  for (int d : {1, 2}) {
    for (auto b : {BaseKind::pucci_plus, BaseKind::pucci_minus, BaseKind::linear_trace}) {
      const auto F = op(b);
      const auto M = d == 1 ? SymMatrix::scalar(1.3) : SymMatrix::of(1.0, 0.0, -1.0);
      const double FM = F.base_value(M);
      const auto g = corrector_grid(d, 1.0 / 8, F, nullptr, 0.0);
      const auto w = solve_corrector(F, nullptr, M, -FM, 0.0, g);
      EXPECT_LE(sup_norm(w), 1e-13);
    }
  }
}

TEST(Corrector, BarrierAndMonotoneInEll) {
  const auto F = op(BaseKind::pucci_minus);
  const auto M = SymMatrix::scalar(0.7);
  const double FM = F.base_value(M);
  const auto g = corrector_grid(1, 1.0 / 32, F, nullptr, 0.0);
  const double eta = 0.5;
  const double beta = 1.0 / (1.0 + 2.0 * F.Lambda * 1.0);
  const auto w = solve_corrector(F, nullptr, M, -FM + eta, 0.0, g);
  for (std::size_t j = 0; j < w.slices(); ++j)
    for (std::size_t i = 0; i < w.slice_size(); ++i) {
      const auto p = w.point(j, i);
      EXPECT_GE(w.at(j, i), beta * eta * (p.t + 1) * (1 - p.x[0] * p.x[0]) - 1e-12);
    }
  EXPECT_GT(w.at(w.slices() - 1, g.flat(32)), 0.0);

  const auto env = checker(1, 8);
  auto Fm = F;
  Fm.modulated = true;
  const auto gm = corrector_grid(1, 1.0 / 16, Fm, &env, 0.5);
  const auto lo = solve_corrector(Fm, &env, M, -1.0, 0.5, gm);
  const auto hi = solve_corrector(Fm, &env, M, -0.9, 0.5, gm);
  for (std::size_t i = 0; i < lo.values.size(); ++i) EXPECT_LE(lo.values[i], hi.values[i] + 1e-12);
}

TEST(SolveEffective, ConstantCoefficientTableMatchesOperator) {
  const auto F = op(BaseKind::pucci_plus, 1.0, 2.0);
  EffectiveTable T;
  T.m = {-200.0, 0.0, 200.0};
  T.fbar = {-200.0, 0.0, 400.0};
  const auto g = make_grid(C1(), 1.0 / 32, F, nullptr);
  auto data = [](std::span<const double> x, double t) { return std::cos(pi * x[0] / 2) + 0.3 * std::sin(pi * x[0]) * (t + 1); };
  SolveConfig cfg;
  cfg.boundary = data;
  const auto u = solve_parabolic(F, nullptr, cfg, g);
  const auto v = solve_effective(T, g, data);
  EXPECT_LE(max_abs_diff(u, v), 1e-6);
}

TEST(SolveEffective, LinearDecayRateAndConstants) {
  const double abar = 4.0 / 3.0;
  EffectiveTable T;
  T.m = {-20.0, 20.0};
  T.fbar = {-20.0 * abar + 0.7, 20.0 * abar + 0.7};
  const auto D = make_box({-1.0}, {1.0}, 0.0, 1.0);
  const auto g = GridSpec::make(D, 1.0 / 64, 0.9 / (64.0 * 64.0 * 2.0 * abar));
  auto data = [](std::span<const double> x, double t) { return t <= 1e-12 ? std::cos(pi * x[0] / 2) : 0.0; };
  const auto u = solve_effective(T, g, data);
  const std::size_t top = u.slices() - 1;
  EXPECT_NEAR(u.at(top, g.flat(64)), std::exp(-abar * pi * pi / 4), 2e-3);
  const auto c = solve_effective(T, g, [](auto, double) { return 1.5; });
  for (double v : c.values) EXPECT_NEAR(v, 1.5, 1e-13);
  EffectiveTable narrow;
  narrow.m = {-1.0, 1.0};
  narrow.fbar = {-1.0, 1.0};
  EXPECT_THROW(solve_effective(narrow, g, data), SolveError);
}

TEST(Comparison, IdenticalAndShiftedData) {
  const auto F = op(BaseKind::pucci_plus);
  const auto g = make_grid(C1(), 1.0 / 16, F, nullptr);
  SolveConfig a;
  a.boundary = [](std::span<const double> x, double t) { return std::sin(3 * x[0] + t); };
  SolveConfig b = a;
  b.boundary = [](std::span<const double> x, double t) { return std::sin(3 * x[0] + t) + 0.25; };
  const auto ua = solve_parabolic(F, nullptr, a, g);
  const auto ua2 = solve_parabolic(F, nullptr, a, g);
  const auto ub = solve_parabolic(F, nullptr, b, g);
  EXPECT_EQ(max_abs_diff(ua, ua2), 0.0);
  for (std::size_t i = 0; i < ua.values.size(); ++i) EXPECT_NEAR(ub.values[i] - ua.values[i], 0.25, 1e-12);
}

TEST(Comparison, RandomOrderedPairs) {
  for (int d : {1, 2}) {
    auto F = op(BaseKind::pucci_minus);
    F.modulated = true;
    const auto env = checker(d, 77);
    const auto g = make_grid(C1(d), 1.0 / 8, F, &env, 0.9, 1.0 / 8);
    const auto rep = comparison_check(F, &env, SolveConfig{}, g, d == 1 ? 100 : 10, 5);
    EXPECT_TRUE(rep.pass) << rep.worst_violation;
  }
}

TEST(Abp, ZeroForNonnegativeSolutions) {
  const auto F = op(BaseKind::pucci_minus);
  const auto g = make_grid(C1(), 1.0 / 16, F, nullptr);
  SolveConfig cfg;
  cfg.rhs = [](std::span<const double> x, double) { return 1.0 + x[0]; };
  const auto u = solve_parabolic(F, nullptr, cfg, g);
  const auto f = SpaceTimeField::from_function(g, [](std::span<const double> x, double) { return 1.0 + x[0]; });
  EXPECT_EQ(abp_ratio(u, f), 0.0);
  auto bad = u;
  bad.at(0, 3) = -1.0;
  EXPECT_THROW(abp_ratio(bad, f), ConfigError);
}

TEST(Abp, NegativeForcingGivesFiniteRatio) {
  const auto F = op(BaseKind::pucci_minus);
  const auto g = make_grid(C1(), 1.0 / 16, F, nullptr);
  SolveConfig cfg;
  cfg.rhs = [](auto, double) { return -1.0; };
  const auto u = solve_parabolic(F, nullptr, cfg, g);
  const auto f = SpaceTimeField::from_function(g, [](auto, double) { return -1.0; });
  const double r = abp_ratio(u, f);
  EXPECT_GT(r, 0.0);
  EXPECT_TRUE(std::isfinite(r));
}
