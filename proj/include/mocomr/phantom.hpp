#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "mocomr/fft.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/random.hpp"
#include "mocomr/sampling.hpp"
#include "mocomr/warp.hpp"

namespace mocomr {

/// Half-space restriction of a body: keeps the part below (or above) a
/// threshold along one axis. Used for the diaphragm boundary.
struct HalfSpaceClip {
  int axis = 0;
  double threshold = 0.0;  // normalized coordinate in [-1, 1]
  bool keep_below = true;
};

/// Ellipsoid in normalized coordinates (the field of view spans [-1, 1) on
/// every axis), painted over previously drawn bodies.
struct Body {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 semi_axes{0.5, 0.5, 0.5};
  double intensity = 1.0;
  std::optional<HalfSpaceClip> clip;
};

struct PhantomSpec {
  GridSpec grid;
  std::vector<Body> bodies;
  double noise_sigma = 0.0;     // complex k-space noise relative to |DC|
  double edge_width_vox = 0.5;  // logistic edge width

  /// Torso with lungs above a diaphragm plane, liver below it, heart, spine
  /// and a few small high-contrast vessels. Axis 0 is superior-inferior.
  static PhantomSpec thorax(const GridSpec& grid, double diaphragm = 0.05) {
    PhantomSpec s;
    s.grid = grid;
    s.bodies = {
        {{0.0, 0.0, 0.0}, {0.97, 0.86, 0.82}, 0.35, std::nullopt},  // torso
        {{-0.38, 0.42, 0.05}, {0.5, 0.3, 0.55}, 0.08, HalfSpaceClip{0, diaphragm, true}},
        {{-0.38, -0.42, 0.05}, {0.5, 0.3, 0.55}, 0.08, HalfSpaceClip{0, diaphragm, true}},
        {{0.42, -0.28, 0.0}, {0.38, 0.48, 0.55}, 0.75, HalfSpaceClip{0, diaphragm, false}},  // liver
        {{0.45, 0.42, -0.15}, {0.22, 0.2, 0.25}, 0.55, std::nullopt},                          // stomach
        {{-0.12, 0.1, 0.22}, {0.24, 0.22, 0.26}, 0.5, std::nullopt},                           // heart
        {{0.0, 0.0, -0.62}, {0.95, 0.09, 0.11}, 0.9, std::nullopt},                            // spine
        {{-0.3, 0.45, 0.1}, {0.07, 0.07, 0.07}, 0.65, std::nullopt},
        {{-0.15, -0.5, -0.1}, {0.06, 0.05, 0.07}, 0.65, std::nullopt},
        {{0.3, -0.3, 0.25}, {0.06, 0.06, 0.06}, 0.2, std::nullopt},   // lesion inside liver
        {{-0.55, -0.35, 0.2}, {0.05, 0.06, 0.05}, 0.65, std::nullopt},
    };
    return s;
  }
};

namespace detail {

/// Voxel center in mm, with the grid center at 0.
inline double voxel_mm(const GridSpec& g, int axis, int i) noexcept {
  return (i - g.dims()[axis] / 2) * g.spacing()[axis];
}

inline double logistic(double d, double w) noexcept { return 1.0 / (1.0 + std::exp(d / w)); }

/// Soft occupancy of a body at a point given in mm.
inline double body_occupancy(const Body& b, const GridSpec& g, const Vec3& p_mm, double w_mm) noexcept {
  const Vec3 fov = g.fov();
  double r2 = 0.0, grad2 = 0.0;
  for (int d = 0; d < 3; ++d) {
    const double half = fov[d] / 2.0;
    const double a = b.semi_axes[d] * half;
    const double q = (p_mm[d] - b.center[d] * half) / a;
    r2 += q * q;
    grad2 += (q / a) * (q / a);
  }
  double occ = 1.0;
  const double r = std::sqrt(r2);
  if (r > 0.0) {
    const double dist = (r - 1.0) * r / std::sqrt(grad2);  // |grad r| = sqrt(grad2) / r
    occ = logistic(dist, w_mm);
  }
  if (b.clip) {
    const double half = fov[b.clip->axis] / 2.0;
    const double s = p_mm[b.clip->axis] - b.clip->threshold * half;
    occ *= logistic(b.clip->keep_below ? s : -s, w_mm);
  }
  return occ;
}

}  // namespace detail

/// Rasterized phantom at the reference (undeformed) state.
inline RealVolume reference_image(const PhantomSpec& spec) {
  const GridSpec& g = spec.grid;
  const auto& d = g.dims();
  const double w = spec.edge_width_vox * std::min({g.spacing()[0], g.spacing()[1], g.spacing()[2]});
  RealVolume out(g);
#pragma omp parallel for schedule(static)
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y)
      for (int z = 0; z < d[2]; ++z) {
        const Vec3 p{detail::voxel_mm(g, 0, x), detail::voxel_mm(g, 1, y), detail::voxel_mm(g, 2, z)};
        double v = 0.0;
        for (const auto& b : spec.bodies) {
          const double a = detail::body_occupancy(b, g, p, w);
          v = v * (1.0 - a) + b.intensity * a;
        }
        out.at(x, y, z) = v;
      }
  return out;
}

/// 0/1 support of the outermost (first) body.
inline RealVolume body_mask(const PhantomSpec& spec) {
  const GridSpec& g = spec.grid;
  RealVolume m(g);
  if (spec.bodies.empty()) return m;
  const double w = spec.edge_width_vox * std::min({g.spacing()[0], g.spacing()[1], g.spacing()[2]});
  for (int x = 0; x < g.nx(); ++x)
    for (int y = 0; y < g.ny(); ++y)
      for (int z = 0; z < g.nz(); ++z) {
        const Vec3 p{detail::voxel_mm(g, 0, x), detail::voxel_mm(g, 1, y), detail::voxel_mm(g, 2, z)};
        m.at(x, y, z) = detail::body_occupancy(spec.bodies.front(), g, p, w) > 0.5 ? 1.0 : 0.0;
      }
  return m;
}

/// Quasi-periodic breathing: a separable spatial envelope (peaking at the
/// diaphragm along axis 0, tapering to zero at the lateral edges) times
/// a(tau) * sin^2(pi tau / period), plus a uniform linear drift.
struct MotionSpec {
  Vec3 amplitude_vox{3.0, 0.3, 0.8};
  double period_tp = 10.0;
  Vec3 drift_vox_per_tp{0.0, 0.0, 0.0};
  double amplitude_jitter = 0.0;  // in [0, 1)
  std::uint64_t seed = 0;
  double diaphragm = 0.05;        // normalized axis-0 position of the envelope peak
  double envelope_width = 0.35;   // normalized Gaussian width along axis 0
};

struct MotionState {
  double tau = 0.0;
  DisplacementField field;
};

inline void validate(const MotionSpec& m) {
  if (!(m.period_tp > 2.0)) throw ArgumentError("motion: period_tp must be > 2");
  if (!(m.amplitude_jitter >= 0.0 && m.amplitude_jitter < 1.0))
    throw ArgumentError("motion: amplitude_jitter must be in [0, 1)");
  for (int d = 0; d < 3; ++d)
    if (!std::isfinite(m.amplitude_vox[d]) || !std::isfinite(m.drift_vox_per_tp[d]))
      throw ArgumentError("motion: amplitude and drift must be finite");
  if (!(m.envelope_width > 0.0)) throw ArgumentError("motion: envelope_width must be positive");
}

/// Breathing amplitude multiplier: cosine interpolation between per-cycle
/// random levels in [1 - jitter, 1 + jitter].
inline double breathing_amplitude(const MotionSpec& m, double tau) {
  if (m.amplitude_jitter == 0.0) return 1.0;
  const double c = tau / m.period_tp;
  const double k = std::floor(c);
  const double f = c - k;
  auto level = [&](double cycle) {
    RandomStream rng(m.seed, "motion.jitter", static_cast<std::uint64_t>(static_cast<std::int64_t>(cycle)));
    return rng.uniform(-1.0, 1.0);
  };
  const double a = level(k), b = level(k + 1.0);
  const double s = 0.5 * (1.0 - std::cos(std::numbers::pi * f));
  return 1.0 + m.amplitude_jitter * (a + (b - a) * s);
}

inline MotionState motion_trajectory(const MotionSpec& m, double tau, const GridSpec& grid) {
  validate(m);
  if (tau < 0.0) throw ArgumentError("motion_trajectory: tau must be >= 0");
  const auto& d = grid.dims();
  std::vector<double> ex(d[0]), ey(d[1]), ez(d[2]);
  for (int i = 0; i < d[0]; ++i) {
    const double p = (i - d[0] / 2) / (d[0] / 2.0);
    const double q = (p - m.diaphragm) / m.envelope_width;
    ex[i] = std::exp(-0.5 * q * q);
  }
  auto taper = [](double p) {
    const double c = std::cos(0.5 * std::numbers::pi * p);
    return c * c;
  };
  for (int i = 0; i < d[1]; ++i) ey[i] = taper((i - d[1] / 2) / (d[1] / 2.0));
  for (int i = 0; i < d[2]; ++i) ez[i] = taper((i - d[2] / 2) / (d[2] / 2.0));

  const double s = std::sin(std::numbers::pi * tau / m.period_tp);
  const double phase = breathing_amplitude(m, tau) * s * s;
  Vec3 amp{}, drift{};
  for (int c = 0; c < 3; ++c) {
    amp[c] = m.amplitude_vox[c] * phase;
    drift[c] = m.drift_vox_per_tp[c] * tau;
  }

  MotionState st{tau, DisplacementField(grid)};
  for (int x = 0; x < d[0]; ++x)
    for (int y = 0; y < d[1]; ++y) {
      const double exy = ex[x] * ey[y];
      for (int z = 0; z < d[2]; ++z) {
        const double e = exy * ez[z];
        double* u = st.field.at(grid.index(x, y, z));
        for (int c = 0; c < 3; ++c) u[c] = amp[c] * e + drift[c];
      }
    }
  return st;
}

/// Field that maps the deformed phantom at `tau` back onto the reference:
/// warp_volume(phantom_image(tau), correction) ~ reference. This is what a
/// registration of the time point against the reference estimates.
inline DisplacementField correction_field(const MotionSpec& m, double tau, const GridSpec& grid) {
  return invert_field(motion_trajectory(m, tau, grid).field);
}

inline RealVolume phantom_image(const RealVolume& reference, const MotionState& state) {
  require_same_grid(reference.grid(), state.field.grid(), "phantom_image");
  if (state.field.is_zero()) return reference;
  return warp_volume(reference, state.field);
}

inline RealVolume phantom_image(const PhantomSpec& spec, const MotionState& state) {
  require_same_grid(spec.grid, state.field.grid(), "phantom_image");
  return phantom_image(reference_image(spec), state);
}

/// Samples of one patch: `lines[i * nx + x]` is readout sample x of point i.
struct PatchSamples {
  double tau = 0.0;
  std::vector<Complex> lines;
};

struct AcquiredEntry {
  std::vector<PatchSamples> patches;  // parallel to the schedule entry's patches
};

struct AcquisitionRecord {
  PatchSchedule schedule;
  std::vector<AcquiredEntry> entries;

  const GridSpec& grid() const noexcept { return schedule.params.grid; }
  int time_points() const noexcept { return static_cast<int>(entries.size()); }

  const Patch& patch(int t, std::size_t i) const { return schedule.entry(t).patches.at(i).patch; }
  const PatchSamples& samples(int t, std::size_t i) const {
    return entries.at(static_cast<std::size_t>(t - 1)).patches.at(i);
  }

  /// Zero-filled k-space of a single patch.
  ComplexVolume patch_kspace(int t, std::size_t i) const {
    ComplexVolume k(grid());
    scatter(k, patch(t, i), samples(t, i));
    return k;
  }

  /// P_t: all patches of time point t, zero outside their support.
  ComplexVolume partial_kspace(int t) const {
    ComplexVolume k(grid());
    const auto& e = schedule.entry(t);
    for (std::size_t i = 0; i < e.patches.size(); ++i) scatter(k, e.patches[i].patch, samples(t, i));
    return k;
  }

 private:
  void scatter(ComplexVolume& k, const Patch& p, const PatchSamples& s) const {
    const GridSpec& g = grid();
    for (std::size_t i = 0; i < p.points.size(); ++i)
      for (int x = 0; x < g.nx(); ++x) k[kspace_index(g, x, p.points[i])] = s.lines[i * g.nx() + x];
  }
};

struct AcquireOptions {
  bool intra_timepoint_motion = true;  // snapshot each patch at its own midpoint
  bool per_line = false;               // snapshot every readout line separately (slow)
  std::uint64_t seed = 0;              // noise stream
};

namespace detail {

inline void copy_line(const ComplexVolume& k, const PhaseEncodePoint& p, Complex* dst) {
  const GridSpec& g = k.grid();
  for (int x = 0; x < g.nx(); ++x) dst[x] = k[kspace_index(g, x, p)];
}

inline ComplexVolume snapshot_kspace(const RealVolume& reference, const MotionSpec& m, double tau) {
  return fft3_forward(to_complex(phantom_image(reference, motion_trajectory(m, tau, reference.grid()))));
}

}  // namespace detail

/// Simulates the acquisition of every scheduled patch of the phantom under
/// the given motion. Each patch (or line, with `per_line`) sees the phantom
/// frozen at its own temporal midpoint.
inline AcquisitionRecord acquire(const PhantomSpec& spec, const MotionSpec& m, const PatchSchedule& s,
                                 const AcquireOptions& opts = {}) {
  require_same_grid(spec.grid, s.params.grid, "acquire");
  validate(m);
  const GridSpec& g = spec.grid;
  const RealVolume reference = reference_image(spec);
  double sum = 0.0;
  for (double v : reference.data()) sum += v;
  const double dc = std::abs(sum) / std::sqrt(static_cast<double>(g.size()));
  const double sigma = spec.noise_sigma * dc / std::numbers::sqrt2;

  AcquisitionRecord rec;
  rec.schedule = s;
  rec.entries.resize(s.entries.size());
  const int nx = g.nx();
  const int T = s.time_points();

#pragma omp parallel for schedule(dynamic)
  for (int t = 1; t <= T; ++t) {
    const auto& e = s.entry(t);
    AcquiredEntry& out = rec.entries[static_cast<std::size_t>(t - 1)];
    out.patches.resize(e.patches.size());
    std::optional<std::pair<double, ComplexVolume>> cached;
    auto kspace_at = [&](double tau) -> const ComplexVolume& {
      if (!cached || cached->first != tau) cached.emplace(tau, detail::snapshot_kspace(reference, m, tau));
      return cached->second;
    };
    const double anchor = e.patches.front().midpoint_ms();
    const double entry_ms = e.duration_ms();
    for (std::size_t i = 0; i < e.patches.size(); ++i) {
      const auto& sp = e.patches[i];
      PatchSamples& ps = out.patches[i];
      ps.tau = opts.intra_timepoint_motion ? e.patch_tau(i) : static_cast<double>(t - 1);
      ps.lines.assign(sp.patch.points.size() * static_cast<std::size_t>(nx), Complex{});
      for (std::size_t j = 0; j < sp.patch.points.size(); ++j) {
        double tau = ps.tau;
        if (opts.per_line && opts.intra_timepoint_motion) {
          const double mid = sp.start_ms + (static_cast<double>(j) + 0.5) * s.params.tr_ms;
          tau = (t - 1) + (mid - anchor) / entry_ms;
        }
        detail::copy_line(kspace_at(tau), sp.patch.points[j], ps.lines.data() + j * nx);
      }
    }
    if (sigma > 0.0) {
      RandomStream rng(opts.seed, "acquire.noise", static_cast<std::uint64_t>(t));
      for (auto& ps : out.patches)
        for (auto& v : ps.lines) v += Complex(sigma * rng.normal(), sigma * rng.normal());
    }
  }
  return rec;
}

}  // namespace mocomr
