#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/binary.hpp"
#include "mocomr/bspline.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/phantom.hpp"
#include "mocomr/reconstruction.hpp"
#include "mocomr/sampling.hpp"

namespace mocomr::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path sidecar_path(const fs::path& payload) { return fs::path(payload.string() + ".json"); }

/// Sidecar of a little-endian float32 payload. `components` values per
/// voxel: 1 real, 2 complex (re, im), 3 displacement (x, y, z).
struct VolumeHeader {
  std::string kind;
  Index3 dims{};
  Vec3 spacing{};
  int components = 1;
  std::size_t payload_bytes = 0;
  std::string sha256;

  GridSpec grid() const { return GridSpec(dims, spacing); }
};

inline int components_of(const std::string& kind) {
  if (kind == "real") return 1;
  if (kind == "complex") return 2;
  if (kind == "displacement") return 3;
  throw DataError("unknown value kind '" + kind + "'");
}

inline json header_json(const VolumeHeader& h) {
  return {{"format", "mocomr-volume"},
          {"version", 1},
          {"kind", h.kind},
          {"dims", h.dims},
          {"spacing_mm", h.spacing},
          {"components", h.components},
          {"dtype", "float32-le"},
          {"axis_order", "x,y,z,component (component fastest, then z)"},
          {"payload_bytes", h.payload_bytes},
          {"sha256", h.sha256}};
}

inline std::string write_raw_volume(const fs::path& path, const std::string& kind, const GridSpec& g,
                                    const std::vector<double>& values) {
  VolumeHeader h{kind, g.dims(), g.spacing(), components_of(kind), 0, {}};
  if (values.size() != g.size() * static_cast<std::size_t>(h.components))
    throw DimensionError("write_volume: value count does not match grid");
  Bytes b;
  b.reserve(values.size() * 4);
  for (double v : values) put_f32(b, v);
  h.payload_bytes = b.size();
  h.sha256 = sha256_hex(b);
  write_file(path, b);
  write_file(sidecar_path(path), header_json(h).dump(2) + "\n");
  return h.sha256;
}

inline VolumeHeader read_header(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(sidecar_path(path)));
  } catch (const json::parse_error& e) {
    throw DataError("volume header is not valid JSON: " + sidecar_path(path).string());
  }
  if (j.value("format", "") != "mocomr-volume") throw DataError("not a volume header: " + sidecar_path(path).string());
  VolumeHeader h;
  h.kind = j.at("kind").get<std::string>();
  h.dims = j.at("dims").get<Index3>();
  h.spacing = j.at("spacing_mm").get<Vec3>();
  h.components = j.at("components").get<int>();
  h.payload_bytes = j.at("payload_bytes").get<std::size_t>();
  h.sha256 = j.at("sha256").get<std::string>();
  if (h.components != components_of(h.kind)) throw DataError("volume header: components disagree with kind");
  return h;
}

inline std::vector<double> read_raw_volume(const fs::path& path, const std::string& kind, GridSpec& grid) {
  const VolumeHeader h = read_header(path);
  if (h.kind != kind) throw DataError("expected a " + kind + " volume, found " + h.kind + ": " + path.string());
  try {
    grid = h.grid();
  } catch (const Error& e) {
    throw DataError(std::string("volume header: ") + e.what());
  }
  const Bytes b = read_file(path);
  const std::size_t expect = grid.size() * static_cast<std::size_t>(h.components) * 4;
  if (b.size() != h.payload_bytes || b.size() != expect)
    throw DataError("volume size mismatch: header dims need " + std::to_string(expect) + " bytes, payload has " +
                    std::to_string(b.size()) + " (" + path.string() + ")");
  if (sha256_hex(b) != h.sha256) throw DataError("volume checksum mismatch: " + path.string());
  Reader r(b);
  std::vector<double> values(grid.size() * static_cast<std::size_t>(h.components));
  for (auto& v : values) v = r.f32();
  return values;
}

inline std::string write_volume(const RealVolume& v, const fs::path& path) {
  return write_raw_volume(path, "real", v.grid(), v.data());
}

inline std::string write_volume(const ComplexVolume& v, const fs::path& path) {
  std::vector<double> values(2 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    values[2 * i] = v[i].real();
    values[2 * i + 1] = v[i].imag();
  }
  return write_raw_volume(path, "complex", v.grid(), values);
}

inline std::string write_volume(const DisplacementField& u, const fs::path& path) {
  return write_raw_volume(path, "displacement", u.grid(), u.data());
}

inline RealVolume read_real_volume(const fs::path& path) {
  GridSpec g;
  auto values = read_raw_volume(path, "real", g);
  return RealVolume(g, std::move(values));
}

inline ComplexVolume read_complex_volume(const fs::path& path) {
  GridSpec g;
  const auto values = read_raw_volume(path, "complex", g);
  ComplexVolume v(g);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = Complex(values[2 * i], values[2 * i + 1]);
  return v;
}

inline DisplacementField read_displacement_field(const fs::path& path) {
  GridSpec g;
  auto values = read_raw_volume(path, "displacement", g);
  return DisplacementField(g, std::move(values));
}

/// B-spline coefficient sequence: float32 coefficients of u_1..u_T, one
/// frame after another, with the control lattice in the sidecar.
inline std::string write_field_sequence(const BSplineFieldSequence& s, const fs::path& path, const json& extra = {}) {
  Bytes b;
  for (const auto& c : s.all_coefficients())
    for (double v : c) put_f32(b, v);
  const std::string sum = sha256_hex(b);
  const auto& l = s.layout();
  json j = {{"format", "mocomr-field-sequence"},
            {"version", 1},
            {"frames", s.size()},
            {"grid", {{"dims", l.grid.dims()}, {"spacing_mm", l.grid.spacing()}}},
            {"control_spacing_vox", l.spacing_vox},
            {"control_dims", l.control_dims},
            {"dtype", "float32-le"},
            {"units", "voxels"},
            {"payload_bytes", b.size()},
            {"sha256", sum}};
  if (!extra.is_null()) j["info"] = extra;
  write_file(path, b);
  write_file(sidecar_path(path), j.dump(2) + "\n");
  return sum;
}

inline BSplineFieldSequence read_field_sequence(const fs::path& path) {
  const json j = json::parse(read_text(sidecar_path(path)));
  if (j.value("format", "") != "mocomr-field-sequence") throw DataError("not a field sequence: " + path.string());
  const GridSpec g(j.at("grid").at("dims").get<Index3>(), j.at("grid").at("spacing_mm").get<Vec3>());
  const auto layout = BSplineLayout::make(g, j.at("control_spacing_vox").get<int>());
  if (layout.control_dims != j.at("control_dims").get<Index3>()) throw DataError("field sequence: control lattice mismatch");
  const int frames = j.at("frames").get<int>();
  const Bytes b = read_file(path);
  if (b.size() != static_cast<std::size_t>(frames) * layout.coefficient_count() * 4 ||
      b.size() != j.at("payload_bytes").get<std::size_t>())
    throw DataError("field sequence size mismatch: " + path.string());
  if (sha256_hex(b) != j.at("sha256").get<std::string>()) throw DataError("field sequence checksum mismatch: " + path.string());
  Reader r(b);
  std::vector<std::vector<double>> coef(static_cast<std::size_t>(frames), std::vector<double>(layout.coefficient_count()));
  for (auto& c : coef)
    for (auto& v : c) v = r.f32();
  return BSplineFieldSequence(layout, std::move(coef));
}

/// Acquisition: the sampled lines of every patch in schedule order as
/// float32 (re, im) pairs. The sidecar holds the schedule and patch times.
inline std::string write_acquisition(const AcquisitionRecord& acq, const fs::path& path) {
  Bytes b;
  json taus = json::array();
  for (const auto& e : acq.entries) {
    json row = json::array();
    for (const auto& p : e.patches) {
      row.push_back(p.tau);
      for (const auto& c : p.lines) {
        put_f32(b, c.real());
        put_f32(b, c.imag());
      }
    }
    taus.push_back(row);
  }
  const std::string sum = sha256_hex(b);
  json j = {{"format", "mocomr-acquisition"}, {"version", 1},           {"dtype", "float32-le complex"},
            {"payload_bytes", b.size()},      {"sha256", sum},          {"patch_tau", taus},
            {"schedule", schedule_to_json(acq.schedule)}};
  write_file(path, b);
  write_file(sidecar_path(path), j.dump(1) + "\n");
  return sum;
}

inline AcquisitionRecord read_acquisition(const fs::path& path) {
  const json j = json::parse(read_text(sidecar_path(path)));
  if (j.value("format", "") != "mocomr-acquisition") throw DataError("not an acquisition record: " + path.string());
  AcquisitionRecord acq;
  acq.schedule = schedule_from_json(j.at("schedule"));
  const Bytes b = read_file(path);
  if (b.size() != j.at("payload_bytes").get<std::size_t>()) throw DataError("acquisition size mismatch: " + path.string());
  if (sha256_hex(b) != j.at("sha256").get<std::string>()) throw DataError("acquisition checksum mismatch: " + path.string());
  const auto& taus = j.at("patch_tau");
  if (taus.size() != acq.schedule.entries.size()) throw DataError("acquisition: patch times do not match schedule");
  const int nx = acq.grid().nx();
  Reader r(b);
  acq.entries.resize(acq.schedule.entries.size());
  for (std::size_t t = 0; t < acq.entries.size(); ++t) {
    const auto& e = acq.schedule.entries[t];
    if (taus[t].size() != e.patches.size()) throw DataError("acquisition: patch times do not match schedule");
    auto& out = acq.entries[t].patches;
    out.resize(e.patches.size());
    for (std::size_t i = 0; i < e.patches.size(); ++i) {
      out[i].tau = taus[t][i].get<double>();
      out[i].lines.resize(e.patches[i].patch.points.size() * static_cast<std::size_t>(nx));
      for (auto& c : out[i].lines) {
        const double re = r.f32();
        c = Complex(re, r.f32());
      }
    }
  }
  if (!r.done()) throw DataError("acquisition payload has trailing bytes: " + path.string());
  return acq;
}

}  // namespace mocomr::io
