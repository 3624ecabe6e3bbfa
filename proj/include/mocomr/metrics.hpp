#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/grid.hpp"

namespace mocomr {

struct ErrorStats {
  double mean_mm = 0.0;
  double p95_mm = 0.0;
  double max_mm = 0.0;
  std::size_t n_voxels = 0;

  nlohmann::json to_json() const {
    return {{"mean_mm", mean_mm}, {"p95_mm", p95_mm}, {"max_mm", max_mm}, {"n_voxels", n_voxels}};
  }
};

/// Percentile with linear interpolation between closest ranks (h = (n-1) q).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("percentile: q must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace detail {

inline std::vector<std::size_t> support(const GridSpec& g, const std::optional<RealVolume>& mask, const char* what) {
  std::vector<std::size_t> idx;
  if (!mask) {
    idx.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) idx[i] = i;
    return idx;
  }
  require_same_grid(g, mask->grid(), what);
  for (std::size_t i = 0; i < g.size(); ++i)
    if ((*mask)[i] > 0.0) idx.push_back(i);
  if (idx.empty()) throw ArgumentError(std::string(what) + ": empty mask");
  return idx;
}

}  // namespace detail

/// Endpoint error |predicted - truth| in millimetres per voxel.
inline std::vector<double> endpoint_errors_mm(const DisplacementField& predicted, const DisplacementField& truth,
                                              const std::optional<RealVolume>& mask = std::nullopt) {
  require_same_grid(predicted.grid(), truth.grid(), "displacement_error_stats");
  const GridSpec& g = truth.grid();
  const auto idx = detail::support(g, mask, "displacement_error_stats");
  std::vector<double> e(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double* a = predicted.at(idx[k]);
    const double* b = truth.at(idx[k]);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = (a[c] - b[c]) * g.spacing()[c];
      s += d * d;
    }
    e[k] = std::sqrt(s);
  }
  return e;
}

inline ErrorStats error_stats(const std::vector<double>& errors) {
  if (errors.empty()) throw ArgumentError("error_stats: no values");
  ErrorStats s;
  s.n_voxels = errors.size();
  double sum = 0.0;
  for (double v : errors) {
    sum += v;
    s.max_mm = std::max(s.max_mm, v);
  }
  s.mean_mm = sum / static_cast<double>(errors.size());
  s.p95_mm = percentile(errors, 0.95);
  return s;
}

inline ErrorStats displacement_error_stats(const DisplacementField& predicted, const DisplacementField& truth,
                                           const std::optional<RealVolume>& mask = std::nullopt) {
  return error_stats(endpoint_errors_mm(predicted, truth, mask));
}

/// Mean isotropic forward-difference gradient magnitude; the last plane of
/// each axis contributes a zero difference.
inline double total_variation(const RealVolume& v, const std::optional<RealVolume>& mask = std::nullopt) {
  v.require_finite("total_variation");
  const GridSpec& g = v.grid();
  const auto idx = detail::support(g, mask, "total_variation");
  const auto& d = g.dims();
  double sum = 0.0;
  for (std::size_t i : idx) {
    const int z = static_cast<int>(i % d[2]);
    const int y = static_cast<int>((i / d[2]) % d[1]);
    const int x = static_cast<int>(i / (static_cast<std::size_t>(d[1]) * d[2]));
    const double c = v[i];
    const double gx = x + 1 < d[0] ? v[g.index(x + 1, y, z)] - c : 0.0;
    const double gy = y + 1 < d[1] ? v[g.index(x, y + 1, z)] - c : 0.0;
    const double gz = z + 1 < d[2] ? v[g.index(x, y, z + 1)] - c : 0.0;
    sum += std::sqrt(gx * gx + gy * gy + gz * gz);
  }
  return sum / static_cast<double>(idx.size());
}

inline double rmse(const RealVolume& a, const RealVolume& b, const std::optional<RealVolume>& mask = std::nullopt) {
  require_same_grid(a.grid(), b.grid(), "rmse");
  const auto idx = detail::support(a.grid(), mask, "rmse");
  double s = 0.0;
  for (std::size_t i : idx) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(idx.size()));
}

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw ConvergenceError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ArgumentError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("incomplete_beta: x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) of Student's t with nu degrees of freedom.
inline double student_t_two_sided(double t, double nu) {
  if (!(nu > 0.0)) throw ArgumentError("student_t: degrees of freedom must be positive");
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

struct TestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;            // two-sided
  double p_value_greater = 0.5;    // one-sided, alternative mean > null
  double cohens_d = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;

  nlohmann::json to_json() const {
    return {{"t_statistic", t_statistic}, {"p_value_two_sided", p_value}, {"p_value_one_sided_greater", p_value_greater},
            {"cohens_d", cohens_d},       {"mean", mean},                 {"sd", sd},
            {"n", n}};
  }
};

inline TestResult one_sample_ttest(std::span<const double> samples, double null_mean = 0.0) {
  const std::size_t n = samples.size();
  if (n < 2) throw ArgumentError("one_sample_ttest: need at least 2 samples");
  for (double v : samples)
    if (!std::isfinite(v)) throw DataError("one_sample_ttest: non-finite sample");
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw DataError("one_sample_ttest: zero sample variance");
  TestResult r;
  r.n = static_cast<int>(n);
  r.mean = mean;
  r.sd = sd;
  r.cohens_d = (mean - null_mean) / sd;
  r.t_statistic = r.cohens_d * std::sqrt(static_cast<double>(n));
  r.p_value = student_t_two_sided(r.t_statistic, static_cast<double>(n - 1));
  r.p_value_greater = r.t_statistic > 0.0 ? 0.5 * r.p_value : 1.0 - 0.5 * r.p_value;
  return r;
}

}  // namespace mocomr
