#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "homlab/homogenize.hpp"

using namespace homlab;

namespace {

OperatorSpec make_op(BaseKind b, bool modulated, double lambda = 1.0, double Lambda = 2.0) {
  OperatorSpec s;
  s.base = b;
  s.modulated = modulated;
  s.lambda = lambda;
  s.Lambda = Lambda;
  return s;
}

EnvSpec constant_env(int d, double c) {
  EnvSpec e;
  e.kind = EnvKind::constant;
  e.d = d;
  e.value = c;
  return e;
}

EnvSpec checkerboard(int d) {
  EnvSpec e;
  e.kind = EnvKind::checkerboard_iid;
  e.d = d;
  e.low = 1.0;
  e.high = 2.0;
  return e;
}

EnvSpec harmonic_env() {
  EnvSpec e;
  e.kind = EnvKind::periodic;
  e.d = 1;
  e.period_x = 2;
  e.table = {1.0, 2.0};
  e.cell_x = 0.5;
  return e;
}

// Periodic cell problem chi_t = a(y) (1 + chi_yy) on [0, 1): the growth rate
// of chi tends to the effective coefficient.
double periodic_cell_oracle(int n) {
  const double h = 1.0 / n, dt = 0.4 * h * h / 2.0;
  std::vector<double> a(n), chi(n, 0.0), next(n);
  for (int i = 0; i < n; ++i) a[i] = (i + 0.5) * h < 0.5 ? 1.0 : 2.0;
  double rate = 0.0;
  for (long step = 0; step < static_cast<long>(4.0 / dt); ++step) {
    for (int i = 0; i < n; ++i) {
      const double lap = (chi[(i + 1) % n] - 2.0 * chi[i] + chi[(i + n - 1) % n]) / (h * h);
      next[i] = chi[i] + dt * a[i] * (1.0 + lap);
    }
    rate = (next[0] - chi[0]) / dt;
    chi.swap(next);
  }
  return rate;
}

EstimatorOptions options(double R, int n_env, double tol = 1e-2) {
  EstimatorOptions o;
  o.R = R;
  o.n_env = n_env;
  o.tol = tol;
  return o;
}

}  // namespace

TEST(Oracle, PeriodicCellProblemGivesHarmonicMean) {
  EXPECT_NEAR(periodic_cell_oracle(64), 4.0 / 3.0, 1e-3);
}

TEST(Oracle, LibraryCellRateMatchesTestOracle) {
  EXPECT_NEAR(periodic_cell_rate(harmonic_env(), 1.0, 32), periodic_cell_oracle(64), 1e-9);
  EXPECT_NEAR(periodic_cell_rate(harmonic_env(), -2.0), -2.0 * 4.0 / 3.0, 3e-3);
}

TEST(EstimateFbar, ConstantCoefficientFixedPointD1) {
  struct Case {
    OperatorSpec op;
    EnvSpec env;
  };
  const std::vector<Case> cases = {
      {make_op(BaseKind::pucci_plus, false), constant_env(1, 1.0)},
      {make_op(BaseKind::pucci_minus, false), constant_env(1, 1.0)},
      {make_op(BaseKind::linear_trace, false, 1.5, 1.5), constant_env(1, 1.0)},
      {make_op(BaseKind::pucci_minus, true), constant_env(1, 1.7)},
  };
  for (const auto& c : cases) {
    for (double m : {0.0, 1.0, -1.0}) {
      const double F = c.op.base_value(SymMatrix::scalar(m)) * (c.op.modulated ? c.env.value : 1.0);
      for (Method meth : {Method::contact_dichotomy, Method::corrector_zero}) {
        const auto e = estimate_fbar(c.op, c.env, SymMatrix::scalar(m), meth, options(1.0, 1), 1);
        EXPECT_NEAR(e.fbar, F, 1e-2 * (1.0 + std::abs(F))) << to_string(meth) << " m=" << m;
        EXPECT_LE(e.ell_lo, -e.fbar);
        EXPECT_GE(e.ell_hi, -e.fbar);
        EXPECT_LE(e.width(), 1e-2);
      }
    }
  }
}

TEST(EstimateFbar, ConstantCoefficientSaddleD2) {
  const auto op = make_op(BaseKind::pucci_plus, false);
  const SymMatrix M = SymMatrix::of(1.0, 0.0, -1.0);
  const double F = op.base_value(M);
  for (Method meth : {Method::contact_dichotomy, Method::corrector_zero}) {
    const auto e = estimate_fbar(op, constant_env(2, 1.0), M, meth, options(1.0, 1), 1);
    EXPECT_NEAR(e.fbar, F, 1e-2 * (1.0 + std::abs(F))) << to_string(meth);
  }
}

TEST(EstimateFbar, HarmonicMeanBothMethods) {
  const auto op = make_op(BaseKind::linear_trace, true, 1.0, 1.0);
  const double oracle = periodic_cell_oracle(64);
  const auto c = estimate_fbar(op, harmonic_env(), SymMatrix::scalar(1.0), Method::corrector_zero,
                               options(3.0, 2), 5);
  EXPECT_NEAR(c.fbar, oracle, 0.03 * oracle);
  const auto d = estimate_fbar(op, harmonic_env(), SymMatrix::scalar(1.0), Method::contact_dichotomy,
                               options(9.0, 2), 5);
  EXPECT_NEAR(d.fbar, oracle, 0.03 * oracle);
}

TEST(EstimateFbar, PucciSandwichUnderCheckerboard) {
  const auto op = make_op(BaseKind::pucci_minus, true);
  for (Method meth : {Method::contact_dichotomy, Method::corrector_zero}) {
    const SymMatrix M = SymMatrix::scalar(1.0);
    const double lo = op.base_value(M) * 1.0, hi = op.base_value(M) * 2.0;
    const auto e = estimate_fbar(op, checkerboard(1), M, meth, options(3.0, 6), 9);
    EXPECT_GE(e.fbar, lo - e.width());
    EXPECT_LE(e.fbar, hi + e.width());
  }
}

TEST(EstimateFbar, RescalingInvariance) {
  // (c w, c M, c l) solves the same problem as (w, M, l), so Fbar(c M) = c Fbar(M)
  const auto op = make_op(BaseKind::pucci_minus, true);
  for (Method meth : {Method::contact_dichotomy, Method::corrector_zero}) {
    const auto a = estimate_fbar(op, checkerboard(1), SymMatrix::scalar(1.0), meth, options(3.0, 4, 1e-3), 4);
    const auto b = estimate_fbar(op, checkerboard(1), SymMatrix::scalar(3.0), meth, options(3.0, 4, 3e-3), 4);
    EXPECT_NEAR(b.fbar / 3.0, a.fbar, a.width() + b.width() / 3.0) << to_string(meth);
  }
}

TEST(EstimateFbar, CommonRandomNumbersMakeRunsReproducible) {
  const auto op = make_op(BaseKind::pucci_plus, true);
  const auto a = estimate_fbar(op, checkerboard(1), SymMatrix::scalar(-1.0), Method::contact_dichotomy,
                               options(1.0, 3), 21);
  const auto b = estimate_fbar(op, checkerboard(1), SymMatrix::scalar(-1.0), Method::contact_dichotomy,
                               options(1.0, 3), 21);
  EXPECT_EQ(a.fbar, b.fbar);
  EXPECT_EQ(a.solves, b.solves);
}

TEST(EstimateFbar, BudgetExhaustion) {
  const auto op = make_op(BaseKind::pucci_plus, false);
  auto o = options(1.0, 1, 1e-6);
  o.budget = 10;
  try {
    estimate_fbar(op, constant_env(1, 1.0), SymMatrix::scalar(1.0), Method::contact_dichotomy, o, 1);
    FAIL() << "expected a budget error";
  } catch (const SolveError& e) {
    EXPECT_EQ(e.key(), "budget");
  }
}

TEST(EstimateFbar, OptionValidation) {
  const auto op = make_op(BaseKind::pucci_plus, false);
  auto o = options(1.0, 0);
  try {
    estimate_fbar(op, constant_env(1, 1.0), SymMatrix::scalar(1.0), Method::corrector_zero, o, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "n_env");
  }
  EXPECT_THROW(method_from_string("guess"), ConfigError);
  EXPECT_EQ(predicate_from_string("threshold"), Predicate::threshold);
}

TEST(ContactFractions, ConstantCoefficientExamples) {
  const auto op = make_op(BaseKind::pucci_minus, false);
  const auto env = constant_env(1, 1.0);
  const SymMatrix M = SymMatrix::scalar(1.0);
  const double F = op.base_value(M);
  const auto crit = contact_fractions(op, env, M, -F, 1.0, 1, 3);
  EXPECT_EQ(crit.p_above, 1.0);
  EXPECT_EQ(crit.p_below, 1.0);
  const auto low = contact_fractions(op, env, M, -F - 0.5, 1.0, 1, 3);
  EXPECT_EQ(low.p_above, 1.0);
  const auto k0 = contact_fractions(op, env, M, -F + 1.0, scale_radius(1), 1, 3);
  const auto k1 = contact_fractions(op, env, M, -F + 1.0, scale_radius(2), 1, 3);
  EXPECT_LT(k0.p_above, 1.0);
  EXPECT_LT(k1.p_above, k0.p_above);
}

TEST(ContactFractions, MonotoneInEllOnCheckerboard) {
  const auto op = make_op(BaseKind::pucci_plus, true);
  const SymMatrix M = SymMatrix::scalar(1.0);
  double prev_above = 2.0, prev_below = -1.0;
  for (double ell : {-3.0, -2.5, -2.0, -1.5, -1.0}) {
    const auto f = contact_fractions(op, checkerboard(1), M, ell, 1.0, 3, 8);
    EXPECT_LE(f.p_above, prev_above);
    EXPECT_GE(f.p_below, prev_below);
    prev_above = f.p_above;
    prev_below = f.p_below;
  }
}

TEST(Ellipticity, ConstantTableExact) {
  EffectiveTable t;
  for (double m : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    t.m.push_back(m);
    t.fbar.push_back(pucci_minus_scalar(m, 1.0, 2.0));
    t.width.push_back(0.0);
  }
  const auto r = ellipticity_of_fbar(t, 1.0, 2.0);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.pairs, 10);
  EXPECT_DOUBLE_EQ(r.min_slope, 1.0);
  EXPECT_DOUBLE_EQ(r.max_slope, 2.0);
}

TEST(Ellipticity, HarmonicTableSlopeInRange) {
  const auto op = make_op(BaseKind::linear_trace, true, 1.0, 1.0);
  const auto t = build_table(op, harmonic_env(), {-1.0, 0.0, 1.0}, Method::corrector_zero, options(3.0, 2), 2);
  const auto r = ellipticity_of_fbar(t, 1.0, 2.0);
  EXPECT_TRUE(r.pass);
  EXPECT_GE(r.min_slope, 1.0 - 0.03);
  EXPECT_LE(r.max_slope, 2.0 + 0.03);
}

TEST(Ellipticity, CorruptedTableFlagged) {
  EffectiveTable t;
  for (double m : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    t.m.push_back(m);
    t.fbar.push_back(1.5 * m);
    t.width.push_back(1e-3);
  }
  const double slack = 2.0 * (t.width[2] + t.width[3]);
  t.fbar[3] += 10.0 * slack + 0.5;
  EXPECT_FALSE(ellipticity_of_fbar(t, 1.0, 2.0).pass);
  t.fbar[3] = 1.5 - 10.0 * slack - 0.5;
  EXPECT_FALSE(ellipticity_of_fbar(t, 1.0, 2.0).pass);
}

TEST(HomogeneousTable, ExtendsByOneHomogeneity) {
  const auto t = homogeneous_table(1.4, -2.8, 10.0, 0.01, 0.02);
  EXPECT_DOUBLE_EQ(t.value(5.0), 7.0);
  EXPECT_DOUBLE_EQ(t.value(-2.5), -7.0);
  EXPECT_DOUBLE_EQ(t.value(0.0), 0.0);
  EXPECT_THROW(t.value(10.5), SolveError);
  EXPECT_THROW(homogeneous_table(1.0, -1.0, 0.0), ConfigError);
}

TEST(HomogenizationExperiment, ConstantCoefficientsAtDiscretizationLevel) {
  const auto op = make_op(BaseKind::linear_trace, true, 1.0, 1.0);
  const auto env = constant_env(1, 1.5);
  const auto table = homogeneous_table(1.5, -1.5, 20.0);
  const SpaceTimeFn g = [](std::span<const double> x, double) {
    return std::cos(M_PI * x[0] / 2.0) + 0.5 * std::sin(M_PI * x[0]);
  };
  const auto rep = homogenization_experiment(op, env, g, {0.5, 0.25}, table, 2, 1);
  ASSERT_EQ(rep.records.size(), 2u);
  for (const auto& r : rep.records) {
    EXPECT_LE(r.q90, 10.0 * (r.h * r.h + r.dt) * 1.5);
  }
}

TEST(HomogenizationExperiment, RejectsBadLadder) {
  const auto op = make_op(BaseKind::linear_trace, true, 1.0, 1.0);
  const auto table = homogeneous_table(1.0, -1.0, 10.0);
  const SpaceTimeFn g = [](std::span<const double>, double) { return 0.0; };
  try {
    homogenization_experiment(op, constant_env(1, 1.0), g, {0.25, 0.5}, table, 1, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "eps_list");
  }
}

TEST(CorrectorDecay, ExactLevelAndOffsetFloor) {
  const auto op = make_op(BaseKind::pucci_plus, false);
  const auto env = constant_env(1, 1.0);
  const SymMatrix M = SymMatrix::scalar(1.0);
  const double ell = -op.base_value(M);
  const auto exact = corrector_decay(op, env, M, ell, {0.5, 0.25}, 2, 1);
  for (const auto& r : exact.records) EXPECT_LE(r.q90, 1e-12);
  const double beta = barrier_beta(op, env, 1);
  const auto off = corrector_decay(op, env, M, ell + 0.1, {0.5, 0.25}, 2, 1);
  for (const auto& r : off.records) EXPECT_GE(r.median, 0.5 * beta * 0.1);
}

TEST(CorrectorDecay, ExceedFractionReported) {
  const auto op = make_op(BaseKind::pucci_plus, false);
  const SymMatrix M = SymMatrix::scalar(1.0);
  const auto rep = corrector_decay(op, constant_env(1, 1.0), M, -2.0 + 0.5, {0.5}, 2, 1, 0.125, 0.9, 1e-6, 1.0);
  EXPECT_DOUBLE_EQ(rep.records.front().exceed_fraction, 1.0);
}
