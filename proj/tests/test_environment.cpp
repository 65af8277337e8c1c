#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <random>

#include "homlab/environment.hpp"

using namespace homlab;

namespace {

EnvSpec checkerboard(int d) {
  EnvSpec s;
  s.kind = EnvKind::checkerboard_iid;
  s.d = d;
  s.low = 1.0;
  s.high = 2.0;
  s.p = 0.5;
  return s;
}

std::vector<SpaceTimePoint> probes(int d, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-20.0, 20.0);
  std::vector<SpaceTimePoint> out;
  for (int k = 0; k < n; ++k) {
    SpaceTimePoint p;
    for (int a = 0; a < d; ++a) p.x.push_back(U(rng));
    p.t = U(rng);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(SampleEnv, Constant) {
  EnvSpec s;
  s.value = 3.0;
  const auto e = sample_env(s, 77);
  for (const auto& p : probes(1, 100, 1)) EXPECT_EQ(e.eval(p), 3.0);
}

TEST(SampleEnv, DeterministicPerSeed) {
  const auto a = sample_env(checkerboard(2), 5), b = sample_env(checkerboard(2), 5);
  const auto c = sample_env(checkerboard(2), 6);
  int differ = 0;
  for (const auto& p : probes(2, 100, 2)) {
    EXPECT_EQ(a.eval(p), b.eval(p));
    differ += a.eval(p) != c.eval(p);
  }
  EXPECT_GE(differ, 1);
}

TEST(SampleEnv, ValidatesSpec) {
  auto s = checkerboard(1);
  s.low = 0.0;
  EXPECT_THROW(sample_env(s, 1), ConfigError);
  s = checkerboard(1);
  s.cell_x = 0.0;
  EXPECT_THROW(sample_env(s, 1), ConfigError);
  s.kind = EnvKind::periodic;
  s.cell_x = 1.0;
  s.table = {1.0, 2.0, 3.0};
  s.period_x = 2;
  try {
    sample_env(s, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "environment.table");
  }
}

TEST(SampleEnv, RangeBound) {
  for (auto kind : {EnvKind::checkerboard_iid, EnvKind::checkerboard_mollified}) {
    auto s = checkerboard(2);
    s.kind = kind;
    const auto e = sample_env(s, 9);
    for (const auto& p : probes(2, 500, 3)) {
      const double v = e.eval(p);
      EXPECT_GE(v, 1.0);
      EXPECT_LE(v, 2.0);
    }
  }
}

TEST(Translate, Identity) {
  for (auto kind : {EnvKind::constant, EnvKind::checkerboard_iid, EnvKind::checkerboard_mollified}) {
    auto s = checkerboard(1);
    s.kind = kind;
    const auto e = sample_env(s, 13);
    SpaceTimePoint u{{0.37}, -1.25}, v{{-2.5}, 0.75};
    const auto tu = translate(e, u);
    const auto tuv = translate(tu, v);
    const auto tsum = translate(e, SpaceTimePoint{{u.x[0] + v.x[0]}, u.t + v.t});
    for (const auto& p : probes(1, 100, 4)) {
      SpaceTimePoint q{{p.x[0] + u.x[0]}, p.t + u.t};
      EXPECT_EQ(tu.eval(p), e.eval(q));
      EXPECT_EQ(tuv.eval(p), tsum.eval(p));
    }
  }
}

TEST(Translate, WholeCellShiftRelabelsCells) {
  const auto e = sample_env(checkerboard(1), 21);
  const auto moved = translate(e, SpaceTimePoint{{1.0}, 0.0});
  for (const auto& p : probes(1, 100, 5)) {
    EXPECT_EQ(moved.eval(p), e.eval(SpaceTimePoint{{p.x[0] + 1.0}, p.t}));
  }
}

TEST(Periodic, TableLayoutAndPeriod) {
  EnvSpec s;
  s.kind = EnvKind::periodic;
  s.d = 1;
  s.period_x = 2;
  s.period_t = 1;
  s.table = {1.0, 2.0};
  s.cell_x = 0.5;
  const auto e = sample_env(s, 3);
  for (const auto& p : probes(1, 100, 6)) {
    EXPECT_EQ(e.eval(p), e.eval(SpaceTimePoint{{p.x[0] + 1.0}, p.t + 0.3}));
    EXPECT_NE(e.eval(p), e.eval(SpaceTimePoint{{p.x[0] + 0.5}, p.t}));
  }
}

TEST(Mollified, MatchesBruteForceBoxAverage) {
  auto s = checkerboard(1);
  s.kind = EnvKind::checkerboard_mollified;
  s.smoothing = 0.3;
  const auto sm = sample_env(s, 17);
  auto raw_spec = s;
  raw_spec.kind = EnvKind::checkerboard_iid;
  const auto raw = sample_env(raw_spec, 17);
  for (const auto& p : probes(1, 30, 8)) {
    const int n = 400;
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double dx = -0.3 + 0.6 * (i + 0.5) / n, dt = -0.3 + 0.6 * (j + 0.5) / n;
        acc += raw.eval(SpaceTimePoint{{p.x[0] + dx}, p.t + dt});
      }
    EXPECT_NEAR(sm.eval(p), acc / (n * n), 1e-2);
  }
}

TEST(WindowMean, ExactForCheckerboard) {
  const auto e = sample_env(checkerboard(2), 4);
  const std::vector<double> lo{-1.3, 0.2}, hi{0.9, 2.6};
  const int n = 200;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < 20; ++k) {
        const double y[2] = {lo[0] + (hi[0] - lo[0]) * (i + 0.5) / n, lo[1] + (hi[1] - lo[1]) * (j + 0.5) / n};
        acc += e.eval(y, -1.0 + 1.7 * (k + 0.5) / 20);
      }
  EXPECT_NEAR(window_mean(e, lo, hi, -1.0, 0.7), acc / (n * n * 20), 2e-2);
}

TEST(Stationarity, ShiftedProbesHaveSameLaw) {
  const auto spec = checkerboard(1);
  const std::array<double, 3> px{0.1, 0.6, 2.3}, pt{0.2, 0.9, -0.4};
  const double vx = 0.37, vt = 0.61;
  std::map<int, int> c0, c1;
  const int n = 1000;
  for (int s = 0; s < n; ++s) {
    const auto e0 = sample_env(spec, derive_seed(1, 0, static_cast<std::uint64_t>(s)));
    const auto e1 = sample_env(spec, derive_seed(1, 1, static_cast<std::uint64_t>(s)));
    int k0 = 0, k1 = 0;
    for (int i = 0; i < 3; ++i) {
      k0 = 2 * k0 + (e0.eval(SpaceTimePoint{{px[i]}, pt[i]}) > 1.5);
      k1 = 2 * k1 + (e1.eval(SpaceTimePoint{{px[i] + vx}, pt[i] + vt}) > 1.5);
    }
    ++c0[k0];
    ++c1[k1];
  }
  double chi2 = 0.0;
  for (int k = 0; k < 8; ++k) {
    const double a = c0[k], b = c1[k];
    if (a + b > 0) chi2 += (a - b) * (a - b) / (a + b);
  }
  EXPECT_LT(chi2, 24.32);  // chi-square, 7 dof, significance 1e-3
}

TEST(Decorrelation, ConstantIsZero) {
  EnvSpec s;
  EXPECT_EQ(decorrelation_estimate(s, 0.0, 50, 1), 0.0);
  EXPECT_EQ(decorrelation_estimate(s, 3.0, 50, 1), 0.0);
  EXPECT_THROW(decorrelation_estimate(s, 1.0, 1, 1), ConfigError);
}

TEST(Decorrelation, OverlapVarianceMatchesCellOracle) {
  // Var(mean of a over C_1) = Var(a) * E_offset[sum of squared cell fractions],
  // the offset expectation computed by brute force.
  const auto spec = checkerboard(1);
  auto sq_fraction_sum = [](double len, double u) {
    double s = 0.0;
    for (int c = -3; c <= 3; ++c) {
      const double l = std::max(-u, c * 1.0), r = std::min(len - u, c + 1.0);
      if (r > l) s += ((r - l) / len) * ((r - l) / len);
    }
    return s;
  };
  double ex = 0.0, et = 0.0;
  const int m = 20000;
  for (int i = 0; i < m; ++i) {
    const double u = (i + 0.5) / m;
    ex += sq_fraction_sum(2.0, u) / m;
    et += sq_fraction_sum(1.0, u) / m;
  }
  const double oracle = 0.25 * ex * et;
  const auto st = decorrelation_stats(spec, 0.0, 10000, 2024);
  EXPECT_GT(st.value(), 0.0);
  EXPECT_NEAR(st.covariance, oracle, 3.0 * st.stderr_ + 2e-3);
}

TEST(Decorrelation, FarWindowsAreUncorrelated) {
  const auto st = decorrelation_stats(checkerboard(1), 3.0, 10000, 99);
  EXPECT_LE(st.value(), 3.0 * st.stderr_);
}
