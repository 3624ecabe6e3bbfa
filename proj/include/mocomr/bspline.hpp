#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mocomr/grid.hpp"

namespace mocomr {

/// Uniform cubic B-spline kernel.
inline double cubic_bspline(double t) noexcept {
  t = std::abs(t);
  if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
  if (t < 2.0) {
    const double s = 2.0 - t;
    return s * s * s / 6.0;
  }
  return 0.0;
}

/// Control lattice of a cubic B-spline displacement field. Control point k
/// along an axis sits at voxel (k - 1) * spacing, so every voxel of the grid
/// has its four supporting control points.
struct BSplineLayout {
  GridSpec grid;
  int spacing_vox = 8;
  Index3 control_dims{};

  static BSplineLayout make(const GridSpec& grid, int spacing_vox) {
    if (spacing_vox < 2) throw ArgumentError("B-spline control point spacing must be >= 2");
    BSplineLayout l{grid, spacing_vox, {}};
    for (int d = 0; d < 3; ++d) l.control_dims[d] = (grid.dims()[d] - 1) / spacing_vox + 4;
    return l;
  }

  std::size_t control_points() const noexcept {
    return static_cast<std::size_t>(control_dims[0]) * control_dims[1] * control_dims[2];
  }
  std::size_t coefficient_count() const noexcept { return 3 * control_points(); }

  friend bool operator==(const BSplineLayout& a, const BSplineLayout& b) noexcept {
    return a.grid == b.grid && a.spacing_vox == b.spacing_vox && a.control_dims == b.control_dims;
  }
};

/// Coefficients are 3-vectors per control point (interleaved, z-control
/// index fastest) in voxel units of the full-resolution grid.
struct BSplineField {
  BSplineLayout layout;
  std::vector<double> coefficients;

  explicit BSplineField(BSplineLayout l) : layout(l), coefficients(l.coefficient_count(), 0.0) {}
  BSplineField(BSplineLayout l, std::vector<double> c) : layout(l), coefficients(std::move(c)) {
    if (coefficients.size() != layout.coefficient_count())
      throw DimensionError("B-spline coefficient count does not match control lattice");
  }
};

namespace detail {

/// Sparse 1D basis: sample i is sum_{j<4} w[i][j] * c[first[i] + j].
struct Basis1D {
  std::vector<int> first;
  std::vector<std::array<double, 4>> weights;
  int controls = 0;
  int samples() const noexcept { return static_cast<int>(first.size()); }
};

/// Basis evaluated at full-resolution coordinates `factor * X + (factor-1)/2`
/// for X = 0..n_level-1 (the centers of `factor`-sized averaging blocks).
inline Basis1D make_basis(int n_level, int factor, int spacing, int controls) {
  Basis1D b;
  b.controls = controls;
  b.first.resize(n_level);
  b.weights.resize(n_level);
  for (int X = 0; X < n_level; ++X) {
    const double pos = factor * X + 0.5 * (factor - 1);
    const double u = pos / spacing;
    const int cell = static_cast<int>(std::floor(u));
    b.first[X] = cell;  // control indices cell .. cell+3 correspond to knots cell-1 .. cell+2
    for (int j = 0; j < 4; ++j) b.weights[X][j] = cubic_bspline(u - (cell - 1 + j));
  }
  return b;
}

/// Tensor-product evaluation of interleaved 3-vector coefficients,
/// contracting z, then y, then x.
inline void tensor_apply(const std::array<Basis1D, 3>& B, const double* coef, const Index3& cd, double* out) {
  const int cx = cd[0], cy = cd[1], cz = cd[2];
  const int nx = B[0].samples(), ny = B[1].samples(), nz = B[2].samples();
  std::vector<double> t1(static_cast<std::size_t>(cx) * cy * nz * 3, 0.0);
  for (int a = 0; a < cx; ++a)
    for (int b = 0; b < cy; ++b) {
      const double* src = coef + (static_cast<std::size_t>(a) * cy + b) * cz * 3;
      double* dst = t1.data() + (static_cast<std::size_t>(a) * cy + b) * nz * 3;
      for (int z = 0; z < nz; ++z) {
        const int f = B[2].first[z];
        const auto& w = B[2].weights[z];
        for (int j = 0; j < 4; ++j)
          for (int c = 0; c < 3; ++c) dst[z * 3 + c] += w[j] * src[(f + j) * 3 + c];
      }
    }
  std::vector<double> t2(static_cast<std::size_t>(cx) * ny * nz * 3, 0.0);
  for (int a = 0; a < cx; ++a)
    for (int y = 0; y < ny; ++y) {
      const int f = B[1].first[y];
      const auto& w = B[1].weights[y];
      double* dst = t2.data() + (static_cast<std::size_t>(a) * ny + y) * nz * 3;
      for (int j = 0; j < 4; ++j) {
        const double* src = t1.data() + (static_cast<std::size_t>(a) * cy + f + j) * nz * 3;
        for (int k = 0; k < nz * 3; ++k) dst[k] += w[j] * src[k];
      }
    }
  const std::size_t plane = static_cast<std::size_t>(ny) * nz * 3;
  for (int x = 0; x < nx; ++x) {
    const int f = B[0].first[x];
    const auto& w = B[0].weights[x];
    double* dst = out + x * plane;
    std::fill(dst, dst + plane, 0.0);
    for (int j = 0; j < 4; ++j) {
      const double* src = t2.data() + (f + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) dst[k] += w[j] * src[k];
    }
  }
}

/// Adjoint of tensor_apply: scatters a dense 3-vector field onto coefficients.
inline void tensor_adjoint(const std::array<Basis1D, 3>& B, const double* dense, const Index3& cd, double* coef) {
  const int cx = cd[0], cy = cd[1], cz = cd[2];
  const int nx = B[0].samples(), ny = B[1].samples(), nz = B[2].samples();
  const std::size_t plane = static_cast<std::size_t>(ny) * nz * 3;
  std::vector<double> t2(static_cast<std::size_t>(cx) * plane, 0.0);
  for (int x = 0; x < nx; ++x) {
    const int f = B[0].first[x];
    const auto& w = B[0].weights[x];
    const double* src = dense + x * plane;
    for (int j = 0; j < 4; ++j) {
      double* dst = t2.data() + (f + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) dst[k] += w[j] * src[k];
    }
  }
  std::vector<double> t1(static_cast<std::size_t>(cx) * cy * nz * 3, 0.0);
  for (int a = 0; a < cx; ++a)
    for (int y = 0; y < ny; ++y) {
      const int f = B[1].first[y];
      const auto& w = B[1].weights[y];
      const double* src = t2.data() + (static_cast<std::size_t>(a) * ny + y) * nz * 3;
      for (int j = 0; j < 4; ++j) {
        double* dst = t1.data() + (static_cast<std::size_t>(a) * cy + f + j) * nz * 3;
        for (int k = 0; k < nz * 3; ++k) dst[k] += w[j] * src[k];
      }
    }
  std::fill(coef, coef + static_cast<std::size_t>(cx) * cy * cz * 3, 0.0);
  for (int a = 0; a < cx; ++a)
    for (int b = 0; b < cy; ++b) {
      const double* src = t1.data() + (static_cast<std::size_t>(a) * cy + b) * nz * 3;
      double* dst = coef + (static_cast<std::size_t>(a) * cy + b) * cz * 3;
      for (int z = 0; z < nz; ++z) {
        const int f = B[2].first[z];
        const auto& w = B[2].weights[z];
        for (int j = 0; j < 4; ++j)
          for (int c = 0; c < 3; ++c) dst[(f + j) * 3 + c] += w[j] * src[z * 3 + c];
      }
    }
}

inline std::array<Basis1D, 3> level_basis(const BSplineLayout& l, const Index3& level_dims, int factor) {
  return {make_basis(level_dims[0], factor, l.spacing_vox, l.control_dims[0]),
          make_basis(level_dims[1], factor, l.spacing_vox, l.control_dims[1]),
          make_basis(level_dims[2], factor, l.spacing_vox, l.control_dims[2])};
}

}  // namespace detail

/// Dense displacement field by cubic B-spline tensor-product evaluation.
inline DisplacementField bspline_to_dense(const BSplineField& f) {
  const auto& l = f.layout;
  const auto B = detail::level_basis(l, l.grid.dims(), 1);
  DisplacementField out(l.grid);
  detail::tensor_apply(B, f.coefficients.data(), l.control_dims, out.data().data());
  return out;
}

/// Least-squares B-spline coefficients for a dense field. The tensor-product
/// system separates, so the pseudo-inverse is applied one axis at a time.
inline BSplineField fit_bspline(const DisplacementField& dense, const BSplineLayout& layout) {
  require_same_grid(dense.grid(), layout.grid, "fit_bspline");
  const auto& l = layout;
  const auto& dims = l.grid.dims();
  std::array<Eigen::MatrixXd, 3> pinv;
  for (int d = 0; d < 3; ++d) {
    const auto b = detail::make_basis(dims[d], 1, l.spacing_vox, l.control_dims[d]);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dims[d], l.control_dims[d]);
    for (int i = 0; i < dims[d]; ++i)
      for (int j = 0; j < 4; ++j) A(i, b.first[i] + j) = b.weights[i][j];
    pinv[d] = A.completeOrthogonalDecomposition().pseudoInverse();
  }
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const int cx = l.control_dims[0], cy = l.control_dims[1], cz = l.control_dims[2];
  const auto& src = dense.data();
  // z
  std::vector<double> t1(static_cast<std::size_t>(nx) * ny * cz * 3, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int k = 0; k < cz; ++k)
        for (int z = 0; z < nz; ++z) {
          const double w = pinv[2](k, z);
          for (int c = 0; c < 3; ++c)
            t1[((static_cast<std::size_t>(x) * ny + y) * cz + k) * 3 + c] += w * src[l.grid.index(x, y, z) * 3 + c];
        }
  // y
  std::vector<double> t2(static_cast<std::size_t>(nx) * cy * cz * 3, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int j = 0; j < cy; ++j)
      for (int y = 0; y < ny; ++y) {
        const double w = pinv[1](j, y);
        for (int k = 0; k < cz * 3; ++k)
          t2[(static_cast<std::size_t>(x) * cy + j) * cz * 3 + k] += w * t1[(static_cast<std::size_t>(x) * ny + y) * cz * 3 + k];
      }
  // x
  BSplineField f(l);
  const std::size_t plane = static_cast<std::size_t>(cy) * cz * 3;
  for (int i = 0; i < cx; ++i)
    for (int x = 0; x < nx; ++x) {
      const double w = pinv[0](i, x);
      for (std::size_t k = 0; k < plane; ++k) f.coefficients[i * plane + k] += w * t2[x * plane + k];
    }
  return f;
}

}  // namespace mocomr
