#pragma once

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <utility>

#include "mocomr/grid.hpp"

namespace mocomr {

namespace detail {

/// FFTW plans keyed by grid dims. Planning is serialized; execution through
/// the new-array interface is thread-safe.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  std::pair<fftw_plan, fftw_plan> plans(const Index3& dims) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = plans_.find(dims);
    if (it != plans_.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    auto* a = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    auto* b = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan fwd = fftw_plan_dft_3d(dims[0], dims[1], dims[2], a, b, FFTW_FORWARD, flags);
    fftw_plan bwd = fftw_plan_dft_3d(dims[0], dims[1], dims[2], a, b, FFTW_BACKWARD, flags);
    fftw_free(a);
    fftw_free(b);
    return plans_.emplace(dims, std::make_pair(fwd, bwd)).first->second;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [dims, p] : plans_) {
      fftw_destroy_plan(p.first);
      fftw_destroy_plan(p.second);
    }
  }

  std::mutex mutex_;
  std::map<Index3, std::pair<fftw_plan, fftw_plan>> plans_;
};

// For even n, shifting the origin to n/2 on both sides of a DFT is a
// (-1)^j modulation of the input, a (-1)^k modulation of the output and a
// global factor exp(-i*pi*n/2) = (-1)^(n/2).
inline ComplexVolume centered_dft(const ComplexVolume& v, bool forward) {
  v.require_finite(forward ? "fft3_forward" : "fft3_inverse");
  const GridSpec& g = v.grid();
  const auto& dims = g.dims();
  auto [fwd, bwd] = FftPlanCache::instance().plans(dims);

  double global = 1.0;
  for (int d = 0; d < 3; ++d)
    if ((dims[d] / 2) % 2 != 0) global = -global;
  const double scale = global / std::sqrt(static_cast<double>(g.size()));

  ComplexVolume in(g);
  for (int x = 0; x < dims[0]; ++x)
    for (int y = 0; y < dims[1]; ++y) {
      const std::size_t base = g.index(x, y, 0);
      double s = ((x + y) % 2 == 0) ? 1.0 : -1.0;
      for (int z = 0; z < dims[2]; ++z, s = -s) in[base + z] = v[base + z] * s;
    }

  ComplexVolume out(g);
  fftw_execute_dft(forward ? fwd : bwd, reinterpret_cast<fftw_complex*>(in.data().data()),
                   reinterpret_cast<fftw_complex*>(out.data().data()));

  for (int x = 0; x < dims[0]; ++x)
    for (int y = 0; y < dims[1]; ++y) {
      const std::size_t base = g.index(x, y, 0);
      double s = ((x + y) % 2 == 0) ? scale : -scale;
      for (int z = 0; z < dims[2]; ++z, s = -s) out[base + z] *= s;
    }
  return out;
}

}  // namespace detail

/// Centered (DC at dims/2), unitary 3D DFT.
inline ComplexVolume fft3_forward(const ComplexVolume& v) { return detail::centered_dft(v, true); }

/// Inverse of fft3_forward under the same centering and normalization.
inline ComplexVolume fft3_inverse(const ComplexVolume& k) { return detail::centered_dft(k, false); }

}  // namespace mocomr
