#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mocomr/bspline.hpp"
#include "mocomr/fft.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/sampling.hpp"

namespace mocomr {

enum class Metric { SSD, NCC };

inline const char* to_string(Metric m) { return m == Metric::SSD ? "ssd" : "ncc"; }
inline Metric metric_from_string(const std::string& s) {
  if (s == "ssd") return Metric::SSD;
  if (s == "ncc") return Metric::NCC;
  throw ArgumentError("unknown registration metric '" + s + "'");
}

struct RegParams {
  int control_point_spacing_vox = 8;
  int levels = 3;
  int iterations = 40;       // trial steps per level
  double step_size = 0.4;    // initial and maximal step, in voxels of the current level
  double tv_weight = 0.01;
  Metric metric = Metric::SSD;
  std::optional<RealVolume> mask;  // 0/1, multiplies the metric integrand
};

inline void validate(const RegParams& p) {
  if (p.control_point_spacing_vox < 2) throw ArgumentError("registration: control point spacing must be >= 2");
  if (p.levels < 1) throw ArgumentError("registration: levels must be >= 1");
  if (p.iterations < 1) throw ArgumentError("registration: iterations must be >= 1");
  if (!(p.step_size > 0.0) || p.step_size > 0.4)
    throw ArgumentError("registration: step size must be in (0, 0.4] voxel");
  if (!(p.tv_weight >= 0.0)) throw ArgumentError("registration: tv_weight must be >= 0");
}

/// Magnitude image of the zero-filled k-space restricted to `patch`.
inline RealVolume zero_filled_recon(const ComplexVolume& center_data, const Patch& patch) {
  if (patch.points.empty()) throw ArgumentError("zero_filled_recon: empty patch support");
  const GridSpec& g = center_data.grid();
  ComplexVolume k(g);
  for (const auto& p : patch.points) {
    if (!in_phase_plane(p, g)) continue;
    for (int x = 0; x < g.nx(); ++x) {
      const std::size_t i = kspace_index(g, x, p);
      k[i] = center_data[i];
    }
  }
  return magnitude(fft3_inverse(k));
}

struct TracePoint {
  int level = 0;       // 0 = coarsest
  int iteration = 0;
  double objective = 0.0;
};

struct RegistrationResult {
  BSplineField field;
  std::vector<TracePoint> trace;  // accepted iterates, per level
  int evaluations = 0;
};

/// Raised when the objective turns non-finite; carries the last finite iterate.
class RegistrationDiverged : public ConvergenceError {
 public:
  RegistrationDiverged(const std::string& what, BSplineField last)
      : ConvergenceError(what), last_(std::move(last)) {}
  const BSplineField& last_iterate() const noexcept { return last_; }

 private:
  BSplineField last_;
};

namespace detail {

struct Image3 {
  Index3 dims{};
  std::vector<double> v;
  std::size_t index(int x, int y, int z) const noexcept {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
};

inline Image3 block_average(const std::vector<double>& src, const Index3& dims, int f) {
  Image3 out;
  out.dims = {dims[0] / f, dims[1] / f, dims[2] / f};
  out.v.assign(static_cast<std::size_t>(out.dims[0]) * out.dims[1] * out.dims[2], 0.0);
  const double norm = 1.0 / (f * f * f);
  for (int X = 0; X < out.dims[0]; ++X)
    for (int Y = 0; Y < out.dims[1]; ++Y)
      for (int Z = 0; Z < out.dims[2]; ++Z) {
        double s = 0.0;
        for (int a = 0; a < f; ++a)
          for (int b = 0; b < f; ++b)
            for (int c = 0; c < f; ++c)
              s += src[(static_cast<std::size_t>(X * f + a) * dims[1] + (Y * f + b)) * dims[2] + (Z * f + c)];
        out.v[out.index(X, Y, Z)] = s * norm;
      }
  return out;
}

/// Trilinear value and spatial gradient with zero padding.
inline double sample_with_gradient(const Image3& im, double px, double py, double pz, double grad[3]) noexcept {
  const auto& d = im.dims;
  const double fx = std::floor(px), fy = std::floor(py), fz = std::floor(pz);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  grad[0] = grad[1] = grad[2] = 0.0;
  if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= d[0] || y0 >= d[1] || z0 >= d[2]) return 0.0;
  const double ax = px - fx, ay = py - fy, az = pz - fz;
  double c[2][2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const int x = x0 + i, y = y0 + j, z = z0 + k;
        c[i][j][k] = (x < 0 || y < 0 || z < 0 || x >= d[0] || y >= d[1] || z >= d[2]) ? 0.0 : im.v[im.index(x, y, z)];
      }
  const double c00 = c[0][0][0] * (1 - az) + c[0][0][1] * az;
  const double c01 = c[0][1][0] * (1 - az) + c[0][1][1] * az;
  const double c10 = c[1][0][0] * (1 - az) + c[1][0][1] * az;
  const double c11 = c[1][1][0] * (1 - az) + c[1][1][1] * az;
  const double c0 = c00 * (1 - ay) + c01 * ay;
  const double c1 = c10 * (1 - ay) + c11 * ay;
  grad[0] = c1 - c0;
  grad[1] = (c01 - c00) * (1 - ax) + (c11 - c10) * ax;
  const double dz00 = c[0][0][1] - c[0][0][0], dz01 = c[0][1][1] - c[0][1][0];
  const double dz10 = c[1][0][1] - c[1][0][0], dz11 = c[1][1][1] - c[1][1][0];
  grad[2] = ((dz00 * (1 - ay) + dz01 * ay) * (1 - ax)) + ((dz10 * (1 - ay) + dz11 * ay) * ax);
  return c0 * (1 - ax) + c1 * ax;
}

constexpr double kTvEpsilon = 1e-3;

/// Registration objective at one pyramid level. Coefficients and dense
/// displacements are in full-resolution voxels; the level grid is `factor`
/// times coarser.
class LevelObjective {
 public:
  LevelObjective(Image3 fixed, Image3 moving, Image3 mask, const BSplineLayout& layout, int factor,
                 const RegParams& p)
      : fixed_(std::move(fixed)),
        moving_(std::move(moving)),
        mask_(std::move(mask)),
        layout_(layout),
        factor_(factor),
        params_(p),
        basis_(level_basis(layout, fixed_.dims, factor)) {
    mask_sum_ = 0.0;
    for (double m : mask_.v) mask_sum_ += m;
  }

  double evaluate(const std::vector<double>& coef, std::vector<double>* grad) const {
    const auto& d = fixed_.dims;
    const std::size_t n = fixed_.v.size();
    const double inv_f = 1.0 / factor_;
    std::vector<double> u(n * 3);
    tensor_apply(basis_, coef.data(), layout_.control_dims, u.data());

    std::vector<double> warped(n), wgrad(n * 3);
    for (int x = 0; x < d[0]; ++x)
      for (int y = 0; y < d[1]; ++y)
        for (int z = 0; z < d[2]; ++z) {
          const std::size_t i = fixed_.index(x, y, z);
          warped[i] = sample_with_gradient(moving_, x + u[3 * i] * inv_f, y + u[3 * i + 1] * inv_f,
                                           z + u[3 * i + 2] * inv_f, &wgrad[3 * i]);
        }

    std::vector<double> g;
    if (grad) g.assign(n * 3, 0.0);
    double metric = 0.0;
    if (params_.metric == Metric::SSD) {
      const double norm = 1.0 / std::max(mask_sum_, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask_.v[i] == 0.0) continue;
        const double r = warped[i] - fixed_.v[i];
        metric += mask_.v[i] * r * r;
        if (grad) {
          const double s = 2.0 * norm * mask_.v[i] * r * inv_f;
          for (int c = 0; c < 3; ++c) g[3 * i + c] += s * wgrad[3 * i + c];
        }
      }
      metric *= norm;
    } else {
      double sw = 0.0, sf = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sw += mask_.v[i] * warped[i];
        sf += mask_.v[i] * fixed_.v[i];
      }
      const double ms = std::max(mask_sum_, 1.0);
      const double mw = sw / ms, mf = sf / ms;
      double sab = 0.0, saa = 0.0, sbb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double a = warped[i] - mw, b = fixed_.v[i] - mf;
        sab += mask_.v[i] * a * b;
        saa += mask_.v[i] * a * a;
        sbb += mask_.v[i] * b * b;
      }
      const double denom = std::sqrt(std::max(saa * sbb, 1e-300));
      const double ncc = sab / denom;
      metric = 1.0 - ncc;
      if (grad)
        for (std::size_t i = 0; i < n; ++i) {
          if (mask_.v[i] == 0.0) continue;
          const double a = warped[i] - mw, b = fixed_.v[i] - mf;
          const double dn = mask_.v[i] * (b / denom - ncc * a / std::max(saa, 1e-300));
          for (int c = 0; c < 3; ++c) g[3 * i + c] -= dn * wgrad[3 * i + c] * inv_f;
        }
    }

    double tv = 0.0;
    if (params_.tv_weight > 0.0) {
      const double lam = params_.tv_weight / static_cast<double>(n);
      const int stride[3] = {d[1] * d[2], d[2], 1};
      for (int x = 0; x < d[0]; ++x)
        for (int y = 0; y < d[1]; ++y)
          for (int z = 0; z < d[2]; ++z) {
            const std::size_t i = fixed_.index(x, y, z);
            const bool has[3] = {x + 1 < d[0], y + 1 < d[1], z + 1 < d[2]};
            double diff[3][3] = {};
            double s = kTvEpsilon * kTvEpsilon;
            for (int a = 0; a < 3; ++a) {
              if (!has[a]) continue;
              const std::size_t j = i + stride[a];
              for (int c = 0; c < 3; ++c) {
                diff[a][c] = (u[3 * j + c] - u[3 * i + c]) * inv_f;
                s += diff[a][c] * diff[a][c];
              }
            }
            const double rho = std::sqrt(s);
            tv += rho;
            if (grad) {
              for (int a = 0; a < 3; ++a) {
                if (!has[a]) continue;
                const std::size_t j = i + stride[a];
                for (int c = 0; c < 3; ++c) {
                  const double q = lam * diff[a][c] / rho * inv_f;
                  g[3 * j + c] += q;
                  g[3 * i + c] -= q;
                }
              }
            }
          }
      tv /= static_cast<double>(n);
    }

    if (grad) {
      grad->assign(layout_.coefficient_count(), 0.0);
      tensor_adjoint(basis_, g.data(), layout_.control_dims, grad->data());
    }
    return metric + params_.tv_weight * tv;
  }

  int factor() const noexcept { return factor_; }

 private:
  Image3 fixed_, moving_, mask_;
  BSplineLayout layout_;
  int factor_;
  RegParams params_;
  std::array<Basis1D, 3> basis_;
  double mask_sum_ = 0.0;
};

inline bool is_constant(const RealVolume& v) {
  if (v.size() == 0) return true;
  const double first = v[0];
  for (double x : v.data())
    if (x != first) return false;
  return true;
}

}  // namespace detail

/// Non-rigid registration returning B-spline coefficients u such that
/// warp_volume(moving, dense(u)) ~ fixed. Minimizes metric + tv_weight * TV(u)
/// coarse to fine by normalized gradient descent with step halving; every
/// accepted step lowers the objective of its level.
inline RegistrationResult register_bspline(const RealVolume& fixed, const RealVolume& moving, const RegParams& p) {
  validate(p);
  require_same_grid(fixed.grid(), moving.grid(), "register");
  if (!fixed.all_finite() || !moving.all_finite()) throw DataError("register: non-finite image values");
  if (detail::is_constant(fixed) || detail::is_constant(moving)) throw ArgumentError("register: constant image");
  if (p.mask) require_same_grid(fixed.grid(), p.mask->grid(), "register mask");

  const GridSpec& g = fixed.grid();
  const BSplineLayout layout = BSplineLayout::make(g, p.control_point_spacing_vox);

  double scale = 0.0;
  for (double v : fixed.data()) scale = std::max(scale, std::abs(v));
  scale = 1.0 / scale;
  std::vector<double> f(fixed.data()), m(moving.data());
  for (auto& v : f) v *= scale;
  for (auto& v : m) v *= scale;
  std::vector<double> mask = p.mask ? p.mask->data() : std::vector<double>(g.size(), 1.0);

  RegistrationResult res{BSplineField(layout), {}, 0};
  std::vector<double>& coef = res.field.coefficients;
  const std::size_t ncp = layout.control_points();

  for (int level = 0; level < p.levels; ++level) {
    int factor = 1 << (p.levels - 1 - level);
    while (factor > 1 && (g.nx() / factor < 4 || g.ny() / factor < 4 || g.nz() / factor < 4)) factor /= 2;
    detail::Image3 lm = detail::block_average(mask, g.dims(), factor);
    for (auto& v : lm.v) v = v >= 0.5 ? 1.0 : 0.0;
    detail::LevelObjective obj(detail::block_average(f, g.dims(), factor), detail::block_average(m, g.dims(), factor),
                               std::move(lm), layout, factor, p);

    const double cap = 0.4 * factor;
    double step = p.step_size * factor;
    const double min_step = 1e-3 * factor;
    std::vector<double> grad, trial_grad;
    double E = obj.evaluate(coef, &grad);
    ++res.evaluations;
    if (!std::isfinite(E)) throw RegistrationDiverged("register: non-finite objective", res.field);
    res.trace.push_back({level, 0, E});

    for (int it = 1; it <= p.iterations; ++it) {
      double gmax = 0.0;
      for (std::size_t k = 0; k < ncp; ++k)
        gmax = std::max(gmax, std::sqrt(grad[3 * k] * grad[3 * k] + grad[3 * k + 1] * grad[3 * k + 1] +
                                        grad[3 * k + 2] * grad[3 * k + 2]));
      if (gmax == 0.0) break;
      std::vector<double> trial(coef);
      const double s = step / gmax;
      for (std::size_t k = 0; k < trial.size(); ++k) trial[k] -= s * grad[k];
      const double Et = obj.evaluate(trial, &trial_grad);
      ++res.evaluations;
      if (!std::isfinite(Et)) throw RegistrationDiverged("register: non-finite objective", res.field);
      if (Et < E) {
        coef.swap(trial);
        grad.swap(trial_grad);
        E = Et;
        res.trace.push_back({level, it, E});
        step = std::min(step * 1.25, cap);
      } else {
        step *= 0.5;
        if (step < min_step) break;
      }
    }
  }
  return res;
}

/// Dense-field form of register_bspline.
inline DisplacementField register_images(const RealVolume& fixed, const RealVolume& moving, const RegParams& p) {
  return bspline_to_dense(register_bspline(fixed, moving, p).field);
}

}  // namespace mocomr
