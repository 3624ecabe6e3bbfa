#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>

#include "mocomr/grid.hpp"

namespace mocomr {

namespace detail {

/// Trilinear sample with zero padding outside the lattice.
template <typename T>
T sample_zero_padded(const Volume<T>& v, double px, double py, double pz) noexcept {
  const auto& d = v.grid().dims();
  const double fx = std::floor(px), fy = std::floor(py), fz = std::floor(pz);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= d[0] || y0 >= d[1] || z0 >= d[2]) return T{};
  const double ax = px - fx, ay = py - fy, az = pz - fz;
  const double wx[2] = {1.0 - ax, ax}, wy[2] = {1.0 - ay, ay}, wz[2] = {1.0 - az, az};
  T acc{};
  for (int i = 0; i < 2; ++i) {
    const int xi = x0 + i;
    if (xi < 0 || xi >= d[0] || wx[i] == 0.0) continue;
    for (int j = 0; j < 2; ++j) {
      const int yj = y0 + j;
      if (yj < 0 || yj >= d[1] || wy[j] == 0.0) continue;
      for (int k = 0; k < 2; ++k) {
        const int zk = z0 + k;
        if (zk < 0 || zk >= d[2] || wz[k] == 0.0) continue;
        acc += v.at(xi, yj, zk) * (wx[i] * wy[j] * wz[k]);
      }
    }
  }
  return acc;
}

/// Trilinear sample of a displacement field, clamping to the border.
inline void sample_field_clamped(const DisplacementField& u, double px, double py, double pz, double out[3]) noexcept {
  const GridSpec& g = u.grid();
  const auto& d = g.dims();
  auto clamp = [](double p, int n) { return p < 0.0 ? 0.0 : (p > n - 1 ? static_cast<double>(n - 1) : p); };
  px = clamp(px, d[0]);
  py = clamp(py, d[1]);
  pz = clamp(pz, d[2]);
  const int x0 = std::min(static_cast<int>(px), d[0] - 2);
  const int y0 = std::min(static_cast<int>(py), d[1] - 2);
  const int z0 = std::min(static_cast<int>(pz), d[2] - 2);
  const double ax = px - x0, ay = py - y0, az = pz - z0;
  out[0] = out[1] = out[2] = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const double w = (i ? ax : 1.0 - ax) * (j ? ay : 1.0 - ay) * (k ? az : 1.0 - az);
        const double* v = u.at(g.index(x0 + i, y0 + j, z0 + k));
        out[0] += w * v[0];
        out[1] += w * v[1];
        out[2] += w * v[2];
      }
}

}  // namespace detail

/// Backward warp: out(x) = v(x + u(x)), trilinear, zero outside the lattice.
template <typename T>
Volume<T> warp_volume(const Volume<T>& v, const DisplacementField& u) {
  require_same_grid(v.grid(), u.grid(), "warp_volume");
  const GridSpec& g = v.grid();
  Volume<T> out(g);
  const auto& d = g.dims();
#pragma omp parallel for schedule(static)
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        const std::size_t i = g.index(x, y, z);
        const double* w = u.at(i);
        out[i] = detail::sample_zero_padded(v, x + w[0], y + w[1], z + w[2]);
      }
  return out;
}

/// Field v with x -> x + v(x) inverting x -> x + u(x), by fixed-point
/// iteration v(x) = -u(x + v(x)). Converges when |grad u| < 1.
inline DisplacementField invert_field(const DisplacementField& u, int iterations = 20) {
  const GridSpec& g = u.grid();
  DisplacementField v(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int c = 0; c < 3; ++c) v.at(i)[c] = -u.at(i)[c];
  if (u.is_zero()) return v;
  const auto& d = g.dims();
  DisplacementField next(g);
  for (int it = 0; it < iterations; ++it) {
#pragma omp parallel for schedule(static)
    for (int x = 0; x < d[0]; ++x)
      for (int y = 0; y < d[1]; ++y)
        for (int z = 0; z < d[2]; ++z) {
          const std::size_t i = g.index(x, y, z);
          const double* vi = v.at(i);
          double s[3];
          detail::sample_field_clamped(u, x + vi[0], y + vi[1], z + vi[2], s);
          double* ni = next.at(i);
          ni[0] = -s[0];
          ni[1] = -s[1];
          ni[2] = -s[2];
        }
    std::swap(v, next);
  }
  return v;
}

/// Composition c(x) = b(x) + a(x + b(x)), i.e. warping by c equals warping
/// by a, then by b.
inline DisplacementField compose_fields(const DisplacementField& a, const DisplacementField& b) {
  require_same_grid(a.grid(), b.grid(), "compose_fields");
  const GridSpec& g = a.grid();
  const auto& d = g.dims();
  DisplacementField c(g);
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        const std::size_t i = g.index(x, y, z);
        const double* bi = b.at(i);
        double s[3];
        detail::sample_field_clamped(a, x + bi[0], y + bi[1], z + bi[2], s);
        for (int k = 0; k < 3; ++k) c.at(i)[k] = bi[k] + s[k];
      }
  return c;
}

/// Root-sum-of-squares of coil magnitudes.
inline RealVolume rms_coil_combine(std::span<const ComplexVolume> coils) {
  if (coils.empty()) throw ArgumentError("rms_coil_combine: empty coil list");
  const GridSpec& g = coils.front().grid();
  for (const auto& c : coils) require_same_grid(g, c.grid(), "rms_coil_combine");
  RealVolume out(g);
  for (const auto& c : coils)
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += std::norm(c[i]);
  for (auto& v : out.data()) v = std::sqrt(v);
  return out;
}

}  // namespace mocomr
