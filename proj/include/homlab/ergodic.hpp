#pragma once

// Lattice cube sequences, ensemble averages of subadditive set functions,
// the greedy covering selection and a statistical maximal-inequality check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "homlab/environment.hpp"
#include "homlab/errors.hpp"
#include "homlab/grid.hpp"
#include "homlab/obstacle.hpp"
#include "homlab/operators.hpp"
#include "homlab/parallel.hpp"
#include "homlab/solver.hpp"
#include "homlab/stats.hpp"

namespace homlab {

/// u + [0, n_1) x ... x [0, n_D) on the integer lattice.
struct LatticeBox {
  std::vector<std::int64_t> origin;
  std::vector<std::int64_t> sides;

  int dim() const { return static_cast<int>(sides.size()); }
  double volume() const {
    double v = 1.0;
    for (auto s : sides) v *= static_cast<double>(s);
    return v;
  }
  bool intersects(const LatticeBox& o) const {
    for (std::size_t a = 0; a < sides.size(); ++a) {
      if (origin[a] >= o.origin[a] + o.sides[a] || o.origin[a] >= origin[a] + sides[a]) return false;
    }
    return true;
  }
  bool contains(const LatticeBox& o) const {
    for (std::size_t a = 0; a < sides.size(); ++a) {
      if (o.origin[a] < origin[a] || o.origin[a] + o.sides[a] > origin[a] + sides[a]) return false;
    }
    return true;
  }
};

enum class SequenceKind { standard, parabolic, custom };

/// Nested boxes anchored at the origin. Parabolic stages are
/// [0, n)^d x [0, n^2) with time as the last axis.
struct CubeSequence {
  SequenceKind kind = SequenceKind::standard;
  int d = 1;  // spatial dimension
  std::vector<std::vector<std::int64_t>> sides;

  int lattice_dim() const { return kind == SequenceKind::parabolic ? d + 1 : static_cast<int>(sides.front().size()); }
  std::size_t stages() const { return sides.size(); }
  LatticeBox box(std::size_t j) const {
    return {std::vector<std::int64_t>(sides[j].size(), 0), sides[j]};
  }

  void validate() const {
    require(!sides.empty(), "sequence.sides", "needs at least one stage");
    for (std::size_t j = 0; j < sides.size(); ++j) {
      require(sides[j].size() == sides.front().size(), "sequence.sides", "stages must share a dimension");
      for (auto s : sides[j]) require(s >= 1, "sequence.sides", "sides must be positive");
      if (j > 0) {
        for (std::size_t a = 0; a < sides[j].size(); ++a) {
          require(sides[j][a] > sides[j - 1][a], "sequence.sides", "sides must be strictly increasing");
        }
      }
    }
  }

  static CubeSequence standard(int d, const std::vector<std::int64_t>& ns) {
    CubeSequence s;
    s.kind = SequenceKind::standard;
    s.d = d;
    for (auto n : ns) s.sides.emplace_back(static_cast<std::size_t>(d), n);
    s.validate();
    return s;
  }
  static CubeSequence parabolic(int d, const std::vector<std::int64_t>& ns) {
    CubeSequence s;
    s.kind = SequenceKind::parabolic;
    s.d = d;
    for (auto n : ns) {
      std::vector<std::int64_t> v(static_cast<std::size_t>(d), n);
      v.push_back(n * n);
      s.sides.push_back(std::move(v));
    }
    s.validate();
    return s;
  }
  static CubeSequence custom(std::vector<std::vector<std::int64_t>> sides) {
    CubeSequence s;
    s.kind = SequenceKind::custom;
    s.sides = std::move(sides);
    s.validate();
    s.d = static_cast<int>(s.sides.front().size());
    return s;
  }
};

/// R(I, omega) with 0 <= R <= C |I|.
struct SubadditiveProcess {
  std::string name;
  std::function<double(const LatticeBox&, const EnvSample&)> eval;
  double bound = 1.0;
  bool stationary_expected = true;
  bool subadditive_expected = true;
  std::function<double(const LatticeBox&)> split_slack = [](const LatticeBox&) { return 1e-9; };

  double operator()(const LatticeBox& I, const EnvSample& env) const {
    const double r = eval(I, env);
    if (!(r >= -1e-12 && r <= bound * I.volume() * (1.0 + 1e-12) + 1e-12)) {
      throw SolveError("bound", "process '" + name + "' returned " + std::to_string(r) +
                                    " outside [0, C|I|] with |I| = " + std::to_string(I.volume()));
    }
    return r;
  }
};

/// R(I) = |I|.
inline SubadditiveProcess volume_process() {
  SubadditiveProcess p;
  p.name = "volume";
  p.eval = [](const LatticeBox& I, const EnvSample&) { return I.volume(); };
  return p;
}

namespace detail {

// Lattice cell -> environment cell: a standard box of the environment's
// spatial dimension reads time cell 0.
inline void cell_coords(const LatticeBox& I, const EnvSample& env, std::size_t flat, std::int64_t* c) {
  const int D = I.dim();
  for (int a = 0; a < D; ++a) {
    const auto n = I.sides[static_cast<std::size_t>(a)];
    c[a] = I.origin[static_cast<std::size_t>(a)] + static_cast<std::int64_t>(flat % static_cast<std::size_t>(n));
    flat /= static_cast<std::size_t>(n);
  }
  if (D == env.spec.d) c[D] = 0;
}

}  // namespace detail

/// Additive process: sum of the environment's cell values over I, bounded by
/// C = max value.
inline SubadditiveProcess cell_sum_process(const EnvSpec& spec) {
  SubadditiveProcess p;
  p.name = "cell_sum";
  p.bound = spec.max_value();
  p.eval = [](const LatticeBox& I, const EnvSample& env) {
    require(I.dim() == env.spec.d || I.dim() == env.spec.d + 1, "sequence.sides",
            "box dimension must be d or d + 1");
    std::int64_t c[4] = {0, 0, 0, 0};
    double s = 0.0;
    const auto n = static_cast<std::size_t>(I.volume());
    for (std::size_t f = 0; f < n; ++f) {
      detail::cell_coords(I, env, f, c);
      s += env.cell_value(std::span<const std::int64_t>(c, static_cast<std::size_t>(env.spec.d + 1)));
    }
    return s;
  };
  return p;
}

/// Contact measure of the obstacle problem from above for F_M on the
/// parabolic box I (space cells of cell_x, time cells of cell_t), counted as
/// contact nodes times the node cell volume, in units of lattice cells.
inline SubadditiveProcess contact_measure_process(const OperatorSpec& op, const SymMatrix& M, double ell,
                                                  double h = 0.125, double cfl = 0.9) {
  SubadditiveProcess p;
  p.name = "contact_measure";
  const OperatorSpec opM = op.shifted(M);
  p.eval = [opM, ell, h, cfl](const LatticeBox& I, const EnvSample& env) {
    const int d = env.spec.d;
    require(I.dim() == d + 1, "sequence.sides", "contact measure needs parabolic boxes (d + 1 axes)");
    std::vector<double> lo, hi;
    for (int a = 0; a < d; ++a) {
      lo.push_back(static_cast<double>(I.origin[static_cast<std::size_t>(a)]) * env.spec.cell_x);
      hi.push_back(static_cast<double>(I.origin[static_cast<std::size_t>(a)] + I.sides[static_cast<std::size_t>(a)]) *
                   env.spec.cell_x);
    }
    const double t0 = static_cast<double>(I.origin[static_cast<std::size_t>(d)]) * env.spec.cell_t;
    const double t1 = t0 + static_cast<double>(I.sides[static_cast<std::size_t>(d)]) * env.spec.cell_t;
    const auto D = make_box(lo, hi, t0, t1);
    const auto [hx, dtx] = resolution_limits(opM, &env, 0.0);
    // a time step dividing cell_t, so that boxes split in time share levels
    const GridSpec probe = make_grid(D, std::min(h, hx), opM, &env, cfl, dtx);
    const double dt = env.spec.cell_t / std::ceil(env.spec.cell_t / probe.dt);
    const GridSpec g = make_grid(D, std::min(h, hx), opM, &env, cfl, dt);
    const auto st = obstacle_stats(opM, &env, ell, 0.0, g, Side::above, 1.0, cfl);
    double cell = g.dt / env.spec.cell_t;
    for (int a = 0; a < d; ++a) cell *= g.h / env.spec.cell_x;
    return static_cast<double>(st.contact_nodes) * cell;
  };
  // interface nodes of a spatial split are interior to I but lateral to both halves
  p.split_slack = [h](const LatticeBox& I) {
    double face = 0.0;
    for (int a = 0; a + 1 < I.dim(); ++a) face = std::max(face, I.volume() / static_cast<double>(I.sides[a]));
    return 1.01 * face * h + 1e-9;
  };
  return p;
}

struct StageStats {
  double volume = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double stderr_ = 0.0;
};

struct ErgodicReport {
  std::vector<StageStats> stages;
  std::vector<std::vector<double>> ratios;  // [realization][stage]
  std::vector<double> drift;                // per realization, last two stages
  double pooled_drift = 0.0;                // |mean_J - mean_{J-1}| / |mean_{J-1}|
  bool variance_shrinks = false;            // pooled variance at the last stage below the first
};

inline ErgodicReport ergodic_average(const SubadditiveProcess& proc, const CubeSequence& seq, const EnvSpec& env_spec,
                                     int n_env, std::uint64_t seed) {
  seq.validate();
  env_spec.validate();
  require(n_env >= 1, "n_env", "must be positive");
  ErgodicReport rep;
  rep.ratios = parallel_map<std::vector<double>>(static_cast<std::size_t>(n_env), [&](std::size_t i) {
    const EnvSample env = sample_env(env_spec, derive_seed(seed, 6, i));
    std::vector<double> r;
    for (std::size_t j = 0; j < seq.stages(); ++j) {
      const auto I = seq.box(j);
      r.push_back(proc(I, env) / I.volume());
    }
    return r;
  });
  for (std::size_t j = 0; j < seq.stages(); ++j) {
    std::vector<double> col;
    for (const auto& r : rep.ratios) col.push_back(r[j]);
    StageStats s;
    s.volume = seq.box(j).volume();
    s.mean = mean(col);
    s.variance = variance(col);
    s.stderr_ = std_error(col);
    rep.stages.push_back(s);
  }
  if (seq.stages() >= 2) {
    const std::size_t J = seq.stages() - 1;
    for (const auto& r : rep.ratios) {
      rep.drift.push_back(r[J - 1] != 0.0 ? std::abs(r[J] - r[J - 1]) / std::abs(r[J - 1]) : std::abs(r[J]));
    }
    const double a = rep.stages[J - 1].mean, b = rep.stages[J].mean;
    rep.pooled_drift = a != 0.0 ? std::abs(b - a) / std::abs(a) : std::abs(b);
    rep.variance_shrinks = rep.stages[J].variance <= rep.stages.front().variance;
  }
  return rep;
}

struct SubadditivityReport {
  int splits = 0;
  int violations = 0;
  double worst = 0.0;  // max of R(I) - R(I1) - R(I2) - slack
  bool pass = false;
};

/// Random binary splits of random boxes inside `container`.
inline SubadditivityReport subadditivity_check(const SubadditiveProcess& proc, const LatticeBox& container,
                                               const EnvSpec& env_spec, int n_splits, std::uint64_t seed) {
  require(n_splits >= 1, "n_splits", "must be positive");
  std::mt19937_64 rng(seed);
  SubadditivityReport r;
  r.worst = -INFINITY;
  for (int k = 0; k < n_splits; ++k) {
    const EnvSample env = sample_env(env_spec, derive_seed(seed, 7, static_cast<std::uint64_t>(k)));
    LatticeBox I = container;
    for (int a = 0; a < I.dim(); ++a) {
      const auto n = container.sides[static_cast<std::size_t>(a)];
      const auto len = 2 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(std::max<std::int64_t>(1, n - 1)));
      I.sides[static_cast<std::size_t>(a)] = std::min(len, n);
      I.origin[static_cast<std::size_t>(a)] =
          container.origin[static_cast<std::size_t>(a)] +
          static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n - I.sides[static_cast<std::size_t>(a)] + 1));
    }
    std::vector<int> splittable;
    for (int a = 0; a < I.dim(); ++a) {
      if (I.sides[static_cast<std::size_t>(a)] >= 2) splittable.push_back(a);
    }
    if (splittable.empty()) continue;
    const int a = splittable[rng() % splittable.size()];
    const auto n = I.sides[static_cast<std::size_t>(a)];
    const auto cut = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n - 1));
    LatticeBox I1 = I, I2 = I;
    I1.sides[static_cast<std::size_t>(a)] = cut;
    I2.origin[static_cast<std::size_t>(a)] += cut;
    I2.sides[static_cast<std::size_t>(a)] = n - cut;
    const double excess = proc(I, env) - proc(I1, env) - proc(I2, env) - proc.split_slack(I);
    r.worst = std::max(r.worst, excess);
    r.violations += excess > 0.0;
    ++r.splits;
  }
  r.pass = r.violations == 0;
  return r;
}

// ---------------------------------------------------------------------------
// Covering selection

struct CoveringPoint {
  std::vector<std::int64_t> u;
  std::vector<std::int64_t> n;
};

struct CoveringResult {
  std::vector<std::size_t> selected;  // input indices in pick order
  double selected_volume = 0.0;
};

/// Greedy selection by decreasing volume (ties: lexicographic in u, then
/// input index). Each pick removes every remaining point of the dilated box
/// prod [u_a - n_a, u_a + 2 n_a), and any point whose cube meets the pick.
/// When the side vectors form a chain (nested cubes) the second rule removes
/// nothing extra and 3^D sum |I| >= |A| holds.
inline CoveringResult vitali_select(const std::vector<CoveringPoint>& pts) {
  if (pts.empty()) return {};
  const std::size_t D = pts.front().u.size();
  for (const auto& p : pts) {
    require(p.u.size() == D && p.n.size() == D, "points", "all points need the same dimension");
    for (auto s : p.n) require(s >= 1, "points", "sides must be positive");
  }
  auto vol = [](const CoveringPoint& p) {
    double v = 1.0;
    for (auto s : p.n) v *= static_cast<double>(s);
    return v;
  };
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double va = vol(pts[a]), vb = vol(pts[b]);
    if (va != vb) return va > vb;
    if (pts[a].u != pts[b].u) return pts[a].u < pts[b].u;
    return a < b;
  });
  std::vector<char> removed(pts.size(), 0);
  CoveringResult res;
  for (std::size_t idx : order) {
    if (removed[idx]) continue;
    const auto& p = pts[idx];
    res.selected.push_back(idx);
    res.selected_volume += vol(p);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (removed[j]) continue;
      bool inside = true;
      for (std::size_t a = 0; a < D && inside; ++a) {
        inside = pts[j].u[a] >= p.u[a] - p.n[a] && pts[j].u[a] < p.u[a] + 2 * p.n[a];
      }
      if (inside || LatticeBox{pts[j].u, pts[j].n}.intersects(LatticeBox{p.u, p.n})) removed[j] = 1;
    }
  }
  return res;
}

struct CoveringCheck {
  bool disjoint = false;
  bool covers = false;  // 3^D sum |I| >= |A|
  bool pass() const { return disjoint && covers; }
};

inline CoveringCheck covering_postconditions(const std::vector<CoveringPoint>& pts, const CoveringResult& res) {
  CoveringCheck c;
  c.disjoint = true;
  for (std::size_t i = 0; i < res.selected.size(); ++i) {
    for (std::size_t j = i + 1; j < res.selected.size(); ++j) {
      const auto& a = pts[res.selected[i]];
      const auto& b = pts[res.selected[j]];
      if (LatticeBox{a.u, a.n}.intersects(LatticeBox{b.u, b.n})) c.disjoint = false;
    }
  }
  const double D = pts.empty() ? 0.0 : static_cast<double>(pts.front().u.size());
  c.covers = std::pow(3.0, D) * res.selected_volume >= static_cast<double>(pts.size());
  return c;
}

/// Random instance: up to 14 (d = 1) or 10 distinct points in [0, 20)^d,
/// sides drawn from a 4-stage nested chain.
inline std::vector<CoveringPoint> random_covering_instance(int d, std::mt19937_64& rng) {
  require(d >= 1, "d", "must be positive");
  std::vector<std::vector<std::int64_t>> chain;
  std::vector<std::int64_t> n(static_cast<std::size_t>(d), 1);
  for (int j = 0; j < 4; ++j) {
    chain.push_back(n);
    for (auto& s : n) s += static_cast<std::int64_t>(rng() % 3);
  }
  const std::size_t count = 1 + rng() % (d == 1 ? 14 : 10);
  std::vector<CoveringPoint> pts;
  while (pts.size() < count) {
    std::vector<std::int64_t> u(static_cast<std::size_t>(d));
    for (auto& x : u) x = static_cast<std::int64_t>(rng() % 20);
    if (std::any_of(pts.begin(), pts.end(), [&](const CoveringPoint& p) { return p.u == u; })) continue;
    pts.push_back({u, chain[rng() % chain.size()]});
  }
  return pts;
}

struct CoveringStress {
  int d = 0;
  int instances = 0;
  int failures = 0;
};

inline CoveringStress covering_stress(int d, int instances, std::uint64_t seed) {
  require(instances >= 1, "ergodic.vitali_instances", "must be positive");
  std::mt19937_64 rng(derive_seed(seed, 9, static_cast<std::uint64_t>(d)));
  CoveringStress s;
  s.d = d;
  for (int k = 0; k < instances; ++k) {
    const auto pts = random_covering_instance(d, rng);
    s.failures += !covering_postconditions(pts, vitali_select(pts)).pass();
    ++s.instances;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Maximal inequality

struct MaximalReport {
  double alpha = 0.0;
  double p_exceed = 0.0;  // fraction of realizations with sup_j R/|I_j| > alpha
  double stderr_ = 0.0;
  double bound = 0.0;     // 3^D / alpha x last-stage mean ratio
  bool pass = false;
};

/// P[sup_j R(I_j)/|I_j| > alpha] <= 3^D / alpha lim E[R/|I|], checked with
/// 3-stderr slack on an ergodic_average run.
inline MaximalReport maximal_inequality_check(const ErgodicReport& rep, int lattice_dim, double alpha) {
  require(alpha > 0.0, "alpha", "must be positive");
  require(!rep.ratios.empty(), "n_env", "needs at least one realization");
  MaximalReport m;
  m.alpha = alpha;
  std::size_t hits = 0;
  for (const auto& r : rep.ratios) hits += *std::max_element(r.begin(), r.end()) > alpha;
  const double n = static_cast<double>(rep.ratios.size());
  m.p_exceed = static_cast<double>(hits) / n;
  m.stderr_ = std::sqrt(std::max(m.p_exceed * (1.0 - m.p_exceed), 1.0 / n) / n);
  m.bound = std::pow(3.0, lattice_dim) / alpha * rep.stages.back().mean;
  m.pass = m.p_exceed <= m.bound + 3.0 * m.stderr_;
  return m;
}

}  // namespace homlab
