#include <gtest/gtest.h>

#include <cmath>

#include "homlab/obstacle.hpp"

using namespace homlab;

namespace {

ParabolicDomain C1(int d = 1) {
  SpaceTimePoint c;
  c.x.assign(static_cast<std::size_t>(d), 0.0);
  return make_domain(DomainKind::cube, c, 1.0);
}

OperatorSpec op(BaseKind b, bool modulated = false) {
  OperatorSpec s;
  s.base = b;
  s.lambda = 1.0;
  s.Lambda = 2.0;
  s.modulated = modulated;
  return s;
}

EnvSample checker(int d, std::uint64_t seed) {
  EnvSpec s;
  s.kind = EnvKind::checkerboard_iid;
  s.d = d;
  return sample_env(s, seed);
}

GridSpec grid_for(const ParabolicDomain& D, double h, const OperatorSpec& F, const EnvSample* env, double eps = 0.0) {
  const auto [hx, dtx] = resolution_limits(F, env, eps);
  return make_grid(D, std::min(h, hx), F, env, 0.9, dtx);
}

}  // namespace

TEST(Obstacle, BelowAdmissibleEllGivesFullContact) {
  const auto F = op(BaseKind::linear_trace, true).shifted(SymMatrix::scalar(1.0));
  const auto env = checker(1, 4);
  const auto g = grid_for(C1(), 1.0 / 16, F, &env);
  // F_M(0) = a in {1, 2}: l <= -2 makes 0 a supersolution.
  const auto above = solve_obstacle(F, &env, -2.0, 0.0, g, Side::above);
  EXPECT_EQ(sup_norm(above.v), 0.0);
  EXPECT_EQ(above.fraction, 1.0);
  const auto below = solve_obstacle(F, &env, -1.0, 0.0, g, Side::below);
  EXPECT_EQ(sup_norm(below.v), 0.0);
  EXPECT_EQ(below.fraction, 1.0);
}

TEST(Obstacle, OffCriticalConstantCoefficients) {
  const auto base = op(BaseKind::pucci_plus);
  const auto M = SymMatrix::scalar(0.5);
  const auto F = base.shifted(M);
  const double FM = base.base_value(M);
  const auto g = grid_for(C1(), 1.0 / 32, F, nullptr);
  const auto sol = solve_obstacle(F, nullptr, -FM + 1.0, 0.0, g, Side::above);
  const double beta = 1.0 / (1.0 + 2.0 * 2.0);
  EXPECT_GT(sol.v.at(sol.v.slices() - 1, g.flat(32)), 0.0);
  EXPECT_LT(sol.fraction, 1.0);
  for (std::size_t j = 0; j < sol.v.slices(); ++j)
    for (std::size_t i = 0; i < sol.v.slice_size(); ++i) {
      const auto p = sol.v.point(j, i);
      EXPECT_GE(sol.v.at(j, i), beta * (p.t + 1) * (1 - p.x[0] * p.x[0]) - 1e-12);
    }
  EXPECT_TRUE(sol.residual.pass) << sol.residual.max_residual;
}

TEST(Obstacle, SignConstraintsAndOrderingChain) {
  for (int d : {1, 2}) {
    const auto F = op(BaseKind::pucci_minus, true).shifted(d == 1 ? SymMatrix::scalar(0.8) : SymMatrix::of(0.8, 0.2, -0.3));
    const auto env = checker(d, 11);
    const auto g = grid_for(C1(d), 1.0 / 8, F, &env);
    for (double ell : {-1.5, -0.5, 0.3}) {
      const auto up = solve_obstacle(F, &env, ell, 0.0, g, Side::above);
      const auto dn = solve_obstacle(F, &env, ell, 0.0, g, Side::below);
      SolveConfig cfg;
      cfg.ell = ell;
      const auto w = solve_parabolic(F, &env, cfg, g);
      for (std::size_t k = 0; k < w.values.size(); ++k) {
        EXPECT_GE(up.v.values[k], 0.0);
        EXPECT_LE(dn.v.values[k], 0.0);
        EXPECT_LE(dn.v.values[k], w.values[k] + 1e-12);
        EXPECT_LE(w.values[k], up.v.values[k] + 1e-12);
      }
      for (std::size_t j = 0; j < w.slices(); ++j)
        for (std::size_t i = 0; i < w.slice_size(); ++i)
          if (w.on_boundary(j, i)) {
            EXPECT_EQ(up.v.at(j, i), 0.0);
            EXPECT_EQ(dn.v.at(j, i), 0.0);
          }
    }
  }
}

TEST(Obstacle, ContactFractionsMonotoneInEll) {
  const auto F = op(BaseKind::pucci_plus, true).shifted(SymMatrix::scalar(1.0));
  const auto env = checker(1, 6);
  const auto g = grid_for(C1(), 1.0 / 16, F, &env);
  double prev_up = 2.0, prev_dn = -1.0;
  for (double ell = -5.0; ell <= 1.0; ell += 0.25) {
    const auto up = obstacle_stats(F, &env, ell, 0.0, g, Side::above);
    const auto dn = obstacle_stats(F, &env, ell, 0.0, g, Side::below);
    EXPECT_LE(up.fraction, prev_up);
    EXPECT_GE(dn.fraction, prev_dn);
    prev_up = up.fraction;
    prev_dn = dn.fraction;
  }
}

TEST(ContactStats, CriticalConstantHasZeroMass) {
  const auto base = op(BaseKind::pucci_minus);
  const auto M = SymMatrix::scalar(-0.6);
  const auto F = base.shifted(M);
  const auto g = grid_for(C1(), 1.0 / 16, F, nullptr);
  const double ell = -base.base_value(M);
  for (Side s : {Side::above, Side::below}) {
    const auto sol = solve_obstacle(F, nullptr, ell, 0.0, g, s);
    const auto st = contact_stats(sol, F, nullptr, ell, 0.0);
    EXPECT_EQ(st.fraction, 1.0);
    EXPECT_EQ(st.mass, 0.0);
  }
}

TEST(ContactStats, FullContactMassMatchesQuadrature) {
  const auto F = op(BaseKind::linear_trace, true).shifted(SymMatrix::scalar(1.0));
  const auto env = checker(1, 31);
  const auto g = grid_for(C1(), 1.0 / 16, F, &env);
  const double ell = -2.5;
  const auto sol = solve_obstacle(F, &env, ell, 0.0, g, Side::above);
  const auto st = contact_stats(sol, F, &env, ell, 0.0);
  double sum = 0.0;
  std::size_t n = 0;
  for (long s = 1; s <= g.nt(); ++s)
    for (std::size_t i = 0; i < g.space_size(); ++i) {
      if (g.lateral(i)) continue;
      const double y[1] = {g.x(0, static_cast<long>(i))};
      const double w = -(ell + env.eval(y, g.t(s)) * 1.0);
      sum += w * w;
      ++n;
    }
  EXPECT_EQ(st.fraction, 1.0);
  EXPECT_NEAR(st.mass, sum / static_cast<double>(n), 1e-12);
  EXPECT_NEAR(st.measure, C1().volume(), 1e-12);
}

TEST(ContactStats, EmptyContact) {
  const auto F = op(BaseKind::linear_trace);
  const auto g = grid_for(C1(), 1.0 / 16, F, nullptr);
  auto sol = solve_obstacle(F, nullptr, 5.0, 0.0, g, Side::above);
  sol.contact_tol = 0.0;
  const auto st = contact_stats(sol, F, nullptr, 5.0, 0.0);
  EXPECT_EQ(st.measure, 0.0);
  EXPECT_EQ(st.mass, 0.0);
}

TEST(Nesting, IdenticalDomains) {
  const auto F = op(BaseKind::pucci_plus, true).shifted(SymMatrix::scalar(0.5));
  const auto env = checker(1, 2);
  const auto rep = nesting_check(F, &env, -1.2, 0.0, C1(), C1(), 1.0 / 16, Side::above);
  EXPECT_TRUE(rep.pass);
  EXPECT_GT(rep.compared, 0u);
}

TEST(Nesting, FullContactCase) {
  const auto base = op(BaseKind::pucci_plus);
  const auto F = base.shifted(SymMatrix::scalar(0.5));
  const auto K2 = C1();
  const auto g = grid_for(K2, 1.0 / 16, F, nullptr);
  const auto K1 = with_time_window(K2, -1.0, -1.0 + g.dt * std::floor(0.5 / g.dt));
  const auto rep = nesting_check(F, nullptr, -base.base_value(SymMatrix::scalar(0.5)) - 1.0, 0.0, K1, K2, 1.0 / 16, Side::above);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.ambiguous, 0u);
}

TEST(Nesting, CheckerboardLowerHalf) {
  for (Side side : {Side::above, Side::below}) {
    const auto F = op(BaseKind::pucci_minus, true).shifted(SymMatrix::scalar(1.0));
    const auto env = checker(1, 12);
    const auto K2 = C1();
    const auto g = grid_for(K2, 1.0 / 16, F, &env);
    const auto K1 = with_time_window(K2, -1.0, -1.0 + g.dt * std::floor(0.5 / g.dt));
    const auto rep = nesting_check(F, &env, -1.4, 0.0, K1, K2, 1.0 / 16, side);
    EXPECT_EQ(rep.mismatched, 0u);
    EXPECT_TRUE(rep.pass);
  }
  EXPECT_THROW(nesting_check(op(BaseKind::linear_trace), nullptr, 0.0, 0.0, C1(), with_time_window(C1(), -1.0, -0.5), 0.25, Side::above), ConfigError);
}

TEST(Obstacle, DomainMonotonicity) {
  const auto F = op(BaseKind::pucci_plus, true).shifted(SymMatrix::scalar(1.0));
  const auto env = checker(1, 19);
  const auto K1 = make_box({-0.5}, {0.5}, -1.0, 0.0);
  const auto K2 = make_box({-1.0}, {1.0}, -1.0, 0.0);
  const auto g2 = grid_for(K2, 1.0 / 16, F, &env);
  const auto g1 = GridSpec::make(K1, g2.h, g2.dt);
  for (Side side : {Side::above, Side::below}) {
    const auto s1 = solve_obstacle(F, &env, -1.6, 0.0, g1, side);
    const auto s2 = solve_obstacle(F, &env, -1.6, 0.0, g2, side);
    std::size_t c1 = 0, c2 = 0;
    for (std::size_t j = 1; j < s1.v.slices(); ++j)
      for (std::size_t i = 0; i < g1.space_size(); ++i) {
        if (g1.lateral(i)) continue;
        const std::size_t i2 = i + 8;
        const double a = s1.v.at(j, i), b = s2.v.at(j, i2);
        if (side == Side::above) EXPECT_LE(a, b + 1e-12);
        else EXPECT_GE(a, b - 1e-12);
        c1 += s1.contact_mask[j * g1.space_size() + i];
        c2 += s2.contact_mask[j * g2.space_size() + i2];
      }
    EXPECT_LE(c2, c1);
  }
}

TEST(Obstacle, OperatorMonotonicity) {
  // F2 = F(. + cI) >= F1 = F: contact from above shrinks, contact from below grows.
  const auto F1 = op(BaseKind::pucci_minus, true).shifted(SymMatrix::scalar(0.5));
  const auto F2 = F1.shifted(SymMatrix::scalar(0.3));
  const auto env = checker(1, 23);
  const auto g = grid_for(C1(), 1.0 / 16, F2, &env);
  for (double ell : {-1.8, -1.2, -0.8}) {
    EXPECT_GE(obstacle_stats(F1, &env, ell, 0.0, g, Side::above).fraction,
              obstacle_stats(F2, &env, ell, 0.0, g, Side::above).fraction);
    EXPECT_LE(obstacle_stats(F1, &env, ell, 0.0, g, Side::below).fraction,
              obstacle_stats(F2, &env, ell, 0.0, g, Side::below).fraction);
  }
}

TEST(Obstacle, HolderProxyStableUnderRefinement) {
  const auto F = op(BaseKind::pucci_plus, true).shifted(SymMatrix::scalar(1.0));
  const auto env = checker(1, 41);
  std::vector<double> s;
  for (double h : {1.0 / 8, 1.0 / 16}) {
    const auto g = grid_for(C1(), h, F, &env);
    const auto sol = solve_obstacle(F, &env, -1.0, 0.0, g, Side::above);
    s.push_back(holder_seminorm(sol.v, 0.5, 2000000, 3));
  }
  EXPECT_GT(s[0], 0.0);
  EXPECT_LE(s[1] / s[0], 2.0);
  EXPECT_GE(s[1] / s[0], 0.5);
}
