#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "mocomr/errors.hpp"

namespace mocomr {

using Complex = std::complex<double>;
using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Voxel lattice of the image domain. Axis 0 is the frequency-encode (readout)
/// direction, axes 1 and 2 are the two phase-encode directions. Storage is
/// row-major, i.e. the z index runs fastest.
class GridSpec {
 public:
  GridSpec() = default;

  GridSpec(Index3 dims, Vec3 spacing) : dims_(dims), spacing_(spacing) {
    for (int d = 0; d < 3; ++d) {
      if (dims_[d] < 2 || dims_[d] % 2 != 0)
        throw ArgumentError("grid dims must be even and >= 2 (axis " + std::to_string(d) + " has " +
                            std::to_string(dims_[d]) + ")");
      if (!(spacing_[d] > 0.0) || !std::isfinite(spacing_[d]))
        throw ArgumentError("grid spacing must be positive (axis " + std::to_string(d) + ")");
    }
  }

  /// Grid with the given matrix covering `fov_mm`.
  static GridSpec from_fov(Index3 dims, Vec3 fov_mm) {
    Vec3 spacing{};
    for (int d = 0; d < 3; ++d) spacing[d] = fov_mm[d] / static_cast<double>(dims[d]);
    return GridSpec(dims, spacing);
  }

  const Index3& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  int nx() const noexcept { return dims_[0]; }
  int ny() const noexcept { return dims_[1]; }
  int nz() const noexcept { return dims_[2]; }

  Vec3 fov() const noexcept {
    return {dims_[0] * spacing_[0], dims_[1] * spacing_[1], dims_[2] * spacing_[2]};
  }

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) *
           static_cast<std::size_t>(dims_[2]);
  }

  std::size_t index(int x, int y, int z) const noexcept {
    return (static_cast<std::size_t>(x) * static_cast<std::size_t>(dims_[1]) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(dims_[2]) +
           static_cast<std::size_t>(z);
  }

  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_[0] && y < dims_[1] && z < dims_[2];
  }

  /// DC index of the centered Fourier convention.
  Index3 center() const noexcept { return {dims_[0] / 2, dims_[1] / 2, dims_[2] / 2}; }

  friend bool operator==(const GridSpec& a, const GridSpec& b) noexcept {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_;
  }

 private:
  Index3 dims_{2, 2, 2};
  Vec3 spacing_{1.0, 1.0, 1.0};
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw DimensionError(std::string(what) + ": grid mismatch");
}

namespace detail {
inline bool is_finite(double v) noexcept { return std::isfinite(v); }
inline bool is_finite(const Complex& v) noexcept { return std::isfinite(v.real()) && std::isfinite(v.imag()); }
}  // namespace detail

/// Scalar volume over a grid.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(GridSpec grid) : grid_(grid), data_(grid.size(), T{}) {}
  Volume(GridSpec grid, std::vector<T> data) : grid_(grid), data_(std::move(data)) {
    if (data_.size() != grid_.size())
      throw DimensionError("volume data length " + std::to_string(data_.size()) + " does not match grid size " +
                           std::to_string(grid_.size()));
  }

  const GridSpec& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(int x, int y, int z) noexcept { return data_[grid_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const noexcept { return data_[grid_.index(x, y, z)]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    for (const auto& v : data_)
      if (!detail::is_finite(v)) return false;
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw DataError(std::string(what) + ": volume contains non-finite values");
  }

 private:
  GridSpec grid_;
  std::vector<T> data_;
};

using RealVolume = Volume<double>;
using ComplexVolume = Volume<Complex>;

/// Per-voxel displacement in voxel units, stored interleaved (x, y, z) per voxel.
class DisplacementField {
 public:
  DisplacementField() = default;
  explicit DisplacementField(GridSpec grid) : grid_(grid), vectors_(grid.size() * 3, 0.0) {}
  DisplacementField(GridSpec grid, std::vector<double> vectors) : grid_(grid), vectors_(std::move(vectors)) {
    if (vectors_.size() != grid_.size() * 3)
      throw DimensionError("displacement field length does not match 3 x grid size");
  }

  const GridSpec& grid() const noexcept { return grid_; }
  std::size_t voxels() const noexcept { return grid_.size(); }

  double* at(std::size_t voxel) noexcept { return vectors_.data() + 3 * voxel; }
  const double* at(std::size_t voxel) const noexcept { return vectors_.data() + 3 * voxel; }

  std::vector<double>& data() noexcept { return vectors_; }
  const std::vector<double>& data() const noexcept { return vectors_; }

  bool is_zero() const noexcept {
    for (double v : vectors_)
      if (v != 0.0) return false;
    return true;
  }

  bool all_finite() const noexcept {
    for (double v : vectors_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Displacement of one voxel in millimetres.
  Vec3 mm(std::size_t voxel) const noexcept {
    const double* u = at(voxel);
    return {u[0] * grid_.spacing()[0], u[1] * grid_.spacing()[1], u[2] * grid_.spacing()[2]};
  }

 private:
  GridSpec grid_;
  std::vector<double> vectors_;
};

inline ComplexVolume to_complex(const RealVolume& v) {
  ComplexVolume out(v.grid());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = Complex(v[i], 0.0);
  return out;
}

inline RealVolume magnitude(const ComplexVolume& v) {
  RealVolume out(v.grid());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]);
  return out;
}

}  // namespace mocomr
