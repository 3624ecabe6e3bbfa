#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/grid.hpp"
#include "mocomr/random.hpp"

namespace mocomr {

/// Offset from the k-space center in the two phase-encode axes (y, z).
struct PhaseEncodePoint {
  int ky = 0;
  int kz = 0;
  friend auto operator<=>(const PhaseEncodePoint&, const PhaseEncodePoint&) = default;
};

/// True if the point lies on the sampled phase-encode plane of the grid.
/// The Nyquist row -n/2 is excluded so the plane is symmetric.
inline bool in_phase_plane(const PhaseEncodePoint& p, const GridSpec& g) noexcept {
  return std::abs(p.ky) < g.ny() / 2 && std::abs(p.kz) < g.nz() / 2;
}

enum class PatchKind { Center, LargeCenter, TinyCenter, Peripheral };

inline bool is_center_kind(PatchKind k) noexcept { return k != PatchKind::Peripheral; }

inline const char* to_string(PatchKind k) {
  switch (k) {
    case PatchKind::Center: return "C";
    case PatchKind::LargeCenter: return "C_large";
    case PatchKind::TinyCenter: return "C_tiny";
    case PatchKind::Peripheral: return "H";
  }
  return "?";
}

inline PatchKind patch_kind_from_string(const std::string& s) {
  if (s == "C") return PatchKind::Center;
  if (s == "C_large") return PatchKind::LargeCenter;
  if (s == "C_tiny") return PatchKind::TinyCenter;
  if (s == "H") return PatchKind::Peripheral;
  throw ArgumentError("unknown patch kind '" + s + "'");
}

/// Lattice points strictly inside the disc of `radius` around `center`, in
/// raster order (ky outer, kz inner). With a grid, points off the phase-encode
/// plane are dropped.
inline std::vector<PhaseEncodePoint> disc_patch_points(int radius, PhaseEncodePoint center,
                                                       const std::optional<GridSpec>& grid = std::nullopt) {
  if (radius < 1) throw ArgumentError("disc_patch_points: radius must be >= 1, got " + std::to_string(radius));
  std::vector<PhaseEncodePoint> pts;
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dz = -radius; dz <= radius; ++dz) {
      if (dy * dy + dz * dz >= r2) continue;
      PhaseEncodePoint p{center.ky + dy, center.kz + dz};
      if (grid && !in_phase_plane(p, *grid)) continue;
      pts.push_back(p);
    }
  return pts;
}

struct Patch {
  PatchKind kind = PatchKind::Center;
  PhaseEncodePoint center;
  int radius = 1;
  std::vector<PhaseEncodePoint> points;

  static Patch make(PatchKind kind, PhaseEncodePoint center, int radius, const GridSpec& grid) {
    if (is_center_kind(kind) && (center.ky != 0 || center.kz != 0))
      throw ArgumentError("center patches must be centered at (0,0)");
    return Patch{kind, center, radius, disc_patch_points(radius, center, grid)};
  }
};

/// 0/1 weight per voxel; one readout line (all x) per phase-encode point.
struct SamplingMask {
  GridSpec grid;
  std::vector<std::uint8_t> weights;

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto w : weights) n += w;
    return n;
  }
};

/// Flat voxel offset of (x, ky, kz) in the centered k-space layout.
inline std::size_t kspace_index(const GridSpec& g, int x, const PhaseEncodePoint& p) noexcept {
  return g.index(x, p.ky + g.ny() / 2, p.kz + g.nz() / 2);
}

inline SamplingMask patch_mask(const Patch& p, const GridSpec& grid) {
  SamplingMask m{grid, std::vector<std::uint8_t>(grid.size(), 0)};
  for (const auto& pt : p.points) {
    if (!in_phase_plane(pt, grid)) continue;
    for (int x = 0; x < grid.nx(); ++x) m.weights[kspace_index(grid, x, pt)] = 1;
  }
  return m;
}

enum class AcquisitionMode { Standard, Accelerated };
enum class PhaseName { Standard, Training, Inference };

inline const char* to_string(AcquisitionMode m) { return m == AcquisitionMode::Standard ? "standard" : "accelerated"; }
inline const char* to_string(PhaseName p) {
  switch (p) {
    case PhaseName::Standard: return "standard";
    case PhaseName::Training: return "training";
    case PhaseName::Inference: return "inference";
  }
  return "?";
}

inline AcquisitionMode acquisition_mode_from_string(const std::string& s) {
  if (s == "standard") return AcquisitionMode::Standard;
  if (s == "accelerated") return AcquisitionMode::Accelerated;
  throw ArgumentError("unknown acquisition mode '" + s + "'");
}

inline PhaseName phase_from_string(const std::string& s) {
  if (s == "standard") return PhaseName::Standard;
  if (s == "training") return PhaseName::Training;
  if (s == "inference") return PhaseName::Inference;
  throw ArgumentError("unknown phase '" + s + "'");
}

struct PatchRadii {
  int center = 6;
  int large_center = 10;
  int tiny_center = 2;
  int peripheral = 5;
  friend bool operator==(const PatchRadii&, const PatchRadii&) = default;
};

struct ScheduleParams {
  AcquisitionMode mode = AcquisitionMode::Standard;
  int time_points = 1500;
  double tr_ms = 2.5;
  GridSpec grid;
  std::uint64_t seed = 0;
  int training_length = 100;
  PatchRadii radii;
};

struct ScheduledPatch {
  Patch patch;
  double start_ms = 0.0;
  double duration_ms = 0.0;
  double midpoint_ms() const noexcept { return start_ms + 0.5 * duration_ms; }
};

struct ScheduleEntry {
  int t = 1;  // 1-based time point
  PhaseName phase = PhaseName::Standard;
  std::vector<ScheduledPatch> patches;

  double start_ms() const noexcept { return patches.empty() ? 0.0 : patches.front().start_ms; }
  double duration_ms() const noexcept {
    double d = 0.0;
    for (const auto& p : patches) d += p.duration_ms;
    return d;
  }

  /// Temporal position of patch `i` in time-point units, relative to the
  /// midpoint of the entry's first patch at t - 1. For a two-patch entry the
  /// second patch sits exactly half a time point later.
  double patch_tau(std::size_t i) const noexcept {
    const double anchor = patches.front().midpoint_ms();
    const double dur = duration_ms();
    return (t - 1) + (dur > 0.0 ? (patches[i].midpoint_ms() - anchor) / dur : 0.0);
  }
};

struct PhaseRange {
  PhaseName name;
  int first;  // inclusive, 1-based
  int last;   // inclusive
};

struct PatchSchedule {
  ScheduleParams params;
  std::vector<PhaseRange> phases;
  std::vector<ScheduleEntry> entries;

  int time_points() const noexcept { return static_cast<int>(entries.size()); }
  const ScheduleEntry& entry(int t) const { return entries.at(static_cast<std::size_t>(t - 1)); }
};

namespace detail {

/// Disc centers whose radius-`radius` discs cover every phase-plane point
/// outside the central disc of `exclusion_radius`. Candidate centers come from
/// a hexagonal lattice; any point still uncovered afterwards gets its own disc.
inline std::vector<PhaseEncodePoint> peripheral_cover(const GridSpec& g, int radius, int exclusion_radius) {
  const int hy = g.ny() / 2, hz = g.nz() / 2;
  auto index = [&](int ky, int kz) { return static_cast<std::size_t>(ky + hy) * g.nz() + (kz + hz); };
  std::vector<char> need(static_cast<std::size_t>(g.ny()) * g.nz(), 0);
  const int ex2 = exclusion_radius * exclusion_radius;
  std::size_t remaining = 0;
  for (int ky = -hy + 1; ky < hy; ++ky)
    for (int kz = -hz + 1; kz < hz; ++kz)
      if (ky * ky + kz * kz >= ex2) {
        need[index(ky, kz)] = 1;
        ++remaining;
      }

  std::vector<PhaseEncodePoint> centers;
  auto try_place = [&](PhaseEncodePoint c) {
    bool useful = false;
    for (const auto& p : disc_patch_points(radius, c, g))
      if (need[index(p.ky, p.kz)]) {
        useful = true;
        break;
      }
    if (!useful) return;
    for (const auto& p : disc_patch_points(radius, c, g)) {
      char& n = need[index(p.ky, p.kz)];
      if (n) {
        n = 0;
        --remaining;
      }
    }
    centers.push_back(c);
  };

  // Hexagonal lattice with side 7: covering radius 7/sqrt(3) ~ 4.04, plus at
  // most ~0.71 from rounding, stays below the strict radius-5 disc.
  const double side = std::max(1.0, radius * 1.4);
  const double row = side * std::sqrt(3.0) / 2.0;
  int r = 0;
  for (double y = -hy - side; y <= hy + side; y += row, ++r) {
    const double offset = (r % 2) ? side / 2.0 : 0.0;
    for (double z = -hz - side + offset; z <= hz + side; z += side)
      try_place({static_cast<int>(std::lround(y)), static_cast<int>(std::lround(z))});
  }
  for (int ky = -hy + 1; ky < hy && remaining > 0; ++ky)
    for (int kz = -hz + 1; kz < hz && remaining > 0; ++kz)
      if (need[index(ky, kz)]) try_place({ky, kz});
  return centers;
}

}  // namespace detail

inline PatchSchedule build_schedule(const ScheduleParams& params) {
  if (params.time_points < 1) throw ArgumentError("build_schedule: T must be >= 1");
  if (!(params.tr_ms > 0.0)) throw ArgumentError("build_schedule: tr_ms must be positive");
  const auto& rd = params.radii;
  if (rd.center < 1 || rd.large_center < 1 || rd.tiny_center < 1 || rd.peripheral < 1)
    throw ArgumentError("build_schedule: patch radii must be >= 1");
  const bool accelerated = params.mode == AcquisitionMode::Accelerated;
  if (accelerated) {
    if (params.training_length < 1)
      throw ArgumentError("build_schedule: training length must be >= 1");
    if (params.time_points < params.training_length)
      throw ArgumentError("build_schedule: accelerated mode needs T >= training length (" +
                          std::to_string(params.training_length) + ")");
  }

  const GridSpec& g = params.grid;
  PatchSchedule s;
  s.params = params;
  if (accelerated) {
    s.phases.push_back({PhaseName::Training, 1, params.training_length});
    if (params.time_points > params.training_length)
      s.phases.push_back({PhaseName::Inference, params.training_length + 1, params.time_points});
  } else {
    s.phases.push_back({PhaseName::Standard, 1, params.time_points});
  }

  const Patch center = Patch::make(PatchKind::Center, {0, 0}, rd.center, g);
  const Patch large = Patch::make(PatchKind::LargeCenter, {0, 0}, rd.large_center, g);
  const Patch tiny = Patch::make(PatchKind::TinyCenter, {0, 0}, rd.tiny_center, g);
  const auto cover = detail::peripheral_cover(g, rd.peripheral, accelerated ? rd.tiny_center : rd.center);

  RandomStream rng(params.seed, "schedule.peripheral");
  std::vector<PhaseEncodePoint> order;
  std::size_t next = 0;
  auto next_peripheral = [&]() {
    if (next == order.size()) {
      order = cover;
      rng.shuffle(order);
      next = 0;
    }
    return order[next++];
  };

  double clock = 0.0;
  // Each patch occupies a fixed slot of the nominal disc size; lines clipped
  // by the k-space edge are played as dummy readouts.
  auto add = [&](ScheduleEntry& e, const Patch& p) {
    const double dur = static_cast<double>(disc_patch_points(p.radius, {0, 0}).size()) * params.tr_ms;
    e.patches.push_back({p, clock, dur});
    clock += dur;
  };

  s.entries.reserve(static_cast<std::size_t>(params.time_points));
  for (int t = 1; t <= params.time_points; ++t) {
    ScheduleEntry e;
    e.t = t;
    if (!accelerated) {
      e.phase = PhaseName::Standard;
      add(e, center);
    } else if (t <= params.training_length) {
      e.phase = PhaseName::Training;
      add(e, large);
    } else {
      e.phase = PhaseName::Inference;
      add(e, tiny);
    }
    if (e.phase != PhaseName::Training && !cover.empty())
      add(e, Patch::make(PatchKind::Peripheral, next_peripheral(), rd.peripheral, g));
    s.entries.push_back(std::move(e));
  }
  return s;
}

inline PatchSchedule build_schedule(AcquisitionMode mode, int time_points, double tr_ms, const GridSpec& grid,
                                    std::uint64_t seed) {
  ScheduleParams p;
  p.mode = mode;
  p.time_points = time_points;
  p.tr_ms = tr_ms;
  p.grid = grid;
  p.seed = seed;
  return build_schedule(p);
}

struct TimingReport {
  std::map<std::string, double> phase_seconds;
  double total_seconds = 0.0;
  std::map<std::string, double> patch_ms;  // per patch kind

  /// Minutes truncated to `decimals` places, the way acquisition times are
  /// usually quoted on protocol sheets.
  static double displayed_minutes(double seconds, int decimals = 1) {
    const double scale = std::pow(10.0, decimals);
    return std::floor(seconds * scale / 60.0) / scale;
  }
};

inline TimingReport schedule_timing(const PatchSchedule& s) {
  TimingReport r;
  for (const auto& ph : s.phases) r.phase_seconds[to_string(ph.name)] = 0.0;
  double total_ms = 0.0;
  std::map<std::string, double> phase_ms;
  for (const auto& e : s.entries) {
    for (const auto& p : e.patches) {
      const double d = p.duration_ms;
      r.patch_ms[to_string(p.patch.kind)] = d;
      phase_ms[to_string(e.phase)] += d;
      total_ms += d;
    }
  }
  for (auto& [name, ms] : phase_ms) r.phase_seconds[name] = ms / 1000.0;
  r.total_seconds = total_ms / 1000.0;
  return r;
}

inline nlohmann::json schedule_to_json(const PatchSchedule& s) {
  using nlohmann::json;
  const auto& p = s.params;
  json j;
  j["mode"] = to_string(p.mode);
  j["time_points"] = p.time_points;
  j["tr_ms"] = p.tr_ms;
  j["seed"] = p.seed;
  j["training_length"] = p.training_length;
  j["grid"] = {{"dims", p.grid.dims()}, {"spacing_mm", p.grid.spacing()}};
  j["radii"] = {{"center", p.radii.center},
                {"large_center", p.radii.large_center},
                {"tiny_center", p.radii.tiny_center},
                {"peripheral", p.radii.peripheral}};
  json phases = json::array();
  for (const auto& ph : s.phases) phases.push_back({{"name", to_string(ph.name)}, {"first", ph.first}, {"last", ph.last}});
  j["phases"] = phases;
  json entries = json::array();
  for (const auto& e : s.entries) {
    json patches = json::array();
    for (const auto& sp : e.patches)
      patches.push_back({{"kind", to_string(sp.patch.kind)},
                         {"center", {sp.patch.center.ky, sp.patch.center.kz}},
                         {"radius", sp.patch.radius},
                         {"start_ms", sp.start_ms},
                         {"duration_ms", sp.duration_ms}});
    entries.push_back({{"t", e.t}, {"phase", to_string(e.phase)}, {"patches", patches}});
  }
  j["entries"] = entries;
  return j;
}

inline PatchSchedule schedule_from_json(const nlohmann::json& j) {
  PatchSchedule s;
  auto& p = s.params;
  p.mode = acquisition_mode_from_string(j.at("mode").get<std::string>());
  p.time_points = j.at("time_points").get<int>();
  p.tr_ms = j.at("tr_ms").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.training_length = j.at("training_length").get<int>();
  p.grid = GridSpec(j.at("grid").at("dims").get<Index3>(), j.at("grid").at("spacing_mm").get<Vec3>());
  const auto& r = j.at("radii");
  p.radii = {r.at("center").get<int>(), r.at("large_center").get<int>(), r.at("tiny_center").get<int>(),
             r.at("peripheral").get<int>()};
  for (const auto& ph : j.at("phases"))
    s.phases.push_back({phase_from_string(ph.at("name").get<std::string>()), ph.at("first").get<int>(),
                        ph.at("last").get<int>()});
  for (const auto& je : j.at("entries")) {
    ScheduleEntry e;
    e.t = je.at("t").get<int>();
    e.phase = phase_from_string(je.at("phase").get<std::string>());
    for (const auto& jp : je.at("patches")) {
      const auto c = jp.at("center").get<std::array<int, 2>>();
      e.patches.push_back({Patch::make(patch_kind_from_string(jp.at("kind").get<std::string>()), {c[0], c[1]},
                                       jp.at("radius").get<int>(), p.grid),
                           jp.at("start_ms").get<double>(), jp.at("duration_ms").get<double>()});
    }
    s.entries.push_back(std::move(e));
  }
  if (static_cast<int>(s.entries.size()) != p.time_points)
    throw DataError("schedule: entry count does not match time_points");
  return s;
}

}  // namespace mocomr
