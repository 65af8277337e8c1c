#pragma once

// Tabulated effective operator Fbar in d = 1: samples (m_i, Fbar(m_i)) with
// piecewise-linear interpolation and no extrapolation.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "homlab/errors.hpp"

namespace homlab {

struct EffectiveTable {
  std::vector<double> m;     // strictly increasing Hessian entries
  std::vector<double> fbar;  // Fbar(m_i)
  std::vector<double> width; // bisection bracket width of each entry (0 if exact)
  double offset = 0.0;       // Fbar(0) subtracted by normalized(), 0 otherwise

  void validate() const {
    require(m.size() >= 2, "fbar_table", "needs at least two samples");
    require(fbar.size() == m.size(), "fbar_table", "m and fbar lengths differ");
    require(width.empty() || width.size() == m.size(), "fbar_table", "width length differs");
    for (std::size_t i = 1; i < m.size(); ++i) {
      require(m[i] > m[i - 1], "fbar_table", "m must be strictly increasing");
    }
    for (double v : fbar) require(std::isfinite(v), "fbar_table", "values must be finite");
  }

  double lo() const { return m.front(); }
  double hi() const { return m.back(); }

  double value(double x) const {
    if (!(x >= m.front() - 1e-12 && x <= m.back() + 1e-12)) {
      throw SolveError("M", "Hessian entry " + std::to_string(x) + " outside the table range [" +
                                std::to_string(m.front()) + ", " + std::to_string(m.back()) +
                                "]; extrapolation refused");
    }
    const auto it = std::upper_bound(m.begin(), m.end(), x);
    std::size_t k = static_cast<std::size_t>(it - m.begin());
    k = std::clamp<std::size_t>(k, 1, m.size() - 1);
    const double w = (x - m[k - 1]) / (m[k] - m[k - 1]);
    return fbar[k - 1] + w * (fbar[k] - fbar[k - 1]);
  }

  double max_slope() const {
    double s = 0.0;
    for (std::size_t i = 1; i < m.size(); ++i) {
      s = std::max(s, (fbar[i] - fbar[i - 1]) / (m[i] - m[i - 1]));
    }
    return s;
  }
  double min_slope() const {
    double s = INFINITY;
    for (std::size_t i = 1; i < m.size(); ++i) {
      s = std::min(s, (fbar[i] - fbar[i - 1]) / (m[i] - m[i - 1]));
    }
    return s;
  }

  /// Copy with Fbar(0) subtracted so that constants solve the limit equation.
  EffectiveTable normalized() const {
    EffectiveTable t = *this;
    const double f0 = value(0.0);
    for (double& v : t.fbar) v -= f0;
    t.offset = offset + f0;
    return t;
  }
};

inline void to_json(nlohmann::json& j, const EffectiveTable& t) {
  j = nlohmann::json{{"m", t.m}, {"fbar", t.fbar}, {"width", t.width}, {"offset", t.offset}};
}

inline void from_json(const nlohmann::json& j, EffectiveTable& t) {
  j.at("m").get_to(t.m);
  j.at("fbar").get_to(t.fbar);
  if (j.contains("width")) j.at("width").get_to(t.width);
  t.offset = j.value("offset", 0.0);
  t.validate();
}

}  // namespace homlab
