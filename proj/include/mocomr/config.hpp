#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/binary.hpp"
#include "mocomr/errors.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/phantom.hpp"
#include "mocomr/registration.hpp"
#include "mocomr/sampling.hpp"

namespace mocomr {

enum class Variant { Static, NonRigid, Shift, Accelerated };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Static: return "static";
    case Variant::NonRigid: return "nonrigid";
    case Variant::Shift: return "shift";
    case Variant::Accelerated: return "accelerated";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "static") return Variant::Static;
  if (s == "nonrigid") return Variant::NonRigid;
  if (s == "shift") return Variant::Shift;
  if (s == "accelerated") return Variant::Accelerated;
  throw ArgumentError("unknown variant '" + s + "' (static|nonrigid|shift|accelerated)");
}

enum class TrainingSplit { Auto, Contiguous, LeadLast };

struct PipelineConfig {
  std::string profile = "paper";
  AcquisitionMode mode = AcquisitionMode::Standard;
  bool simulate_accelerated = true;
  std::uint64_t seed = 0;

  int time_points = 1500;
  double tr_ms = 2.5;
  int training_length = 100;
  PatchRadii radii;

  Index3 dims{128, 128, 88};
  Vec3 fov_mm{400.0, 400.0, 275.0};

  double noise_sigma = 1e-5;
  double diaphragm = 0.05;
  double edge_width_vox = 0.5;

  Vec3 amplitude_vox{3.0, 0.3, 0.8};
  double period_tp = 9.0;
  Vec3 drift_vox_per_tp{0.0, 0.0, 0.0};
  double amplitude_jitter = 0.2;
  double envelope_width = 0.35;
  bool intra_timepoint_motion = true;
  bool per_line = false;

  int control_point_spacing_vox = 8;
  int levels = 3;
  int iterations = 40;
  double step_size = 0.4;
  double tv_weight = 0.01;
  Metric metric = Metric::SSD;
  bool use_mask = false;

  int d_pca = 10;
  double ridge = 1e-6;
  TrainingSplit training_split = TrainingSplit::Auto;

  int reference = 1;
  double delta = 0.5;
  bool deterministic_reduction = true;

  std::vector<Variant> variants{Variant::Static, Variant::NonRigid, Variant::Shift, Variant::Accelerated};
  bool export_slices = true;
  int slice_axis = 1;
  std::vector<int> slice_indices;  // empty: the central slice

  std::string output_dir = "run";

  GridSpec grid() const { return GridSpec::from_fov(dims, fov_mm); }

  ScheduleParams schedule_params() const {
    ScheduleParams p;
    p.mode = mode;
    p.time_points = time_points;
    p.tr_ms = tr_ms;
    p.grid = grid();
    p.seed = seed;
    p.training_length = training_length;
    p.radii = radii;
    return p;
  }

  PhantomSpec phantom() const {
    PhantomSpec s = PhantomSpec::thorax(grid(), diaphragm);
    s.noise_sigma = noise_sigma;
    s.edge_width_vox = edge_width_vox;
    return s;
  }

  MotionSpec motion() const {
    MotionSpec m;
    m.amplitude_vox = amplitude_vox;
    m.period_tp = period_tp;
    m.drift_vox_per_tp = drift_vox_per_tp;
    m.amplitude_jitter = amplitude_jitter;
    m.seed = seed;
    m.diaphragm = diaphragm;
    m.envelope_width = envelope_width;
    return m;
  }

  RegParams registration() const {
    RegParams p;
    p.control_point_spacing_vox = control_point_spacing_vox;
    p.levels = levels;
    p.iterations = iterations;
    p.step_size = step_size;
    p.tv_weight = tv_weight;
    p.metric = metric;
    return p;
  }

  bool wants(Variant v) const { return std::find(variants.begin(), variants.end(), v) != variants.end(); }
};

/// Defaults of a named profile. "paper" is the full-size protocol
/// (128x128x88, T = 1500, 100 training time points); "desk" is the reduced
/// 64x64x44 setting with T = 150 and 20 training time points.
inline PipelineConfig profile_defaults(const std::string& name) {
  PipelineConfig c;
  if (name == "paper") return c;
  if (name != "desk") throw ConfigError("profile", "unknown profile '" + name + "' (desk|paper)");
  c.profile = "desk";
  c.time_points = 150;
  c.training_length = 20;
  c.dims = {64, 64, 44};
  c.period_tp = 20.0 / 3.0;
  c.control_point_spacing_vox = 8;
  c.levels = 2;
  c.output_dir = "run_desk";
  return c;
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  using nlohmann::json;
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(to_string(v));
  const char* split = c.training_split == TrainingSplit::Auto         ? "auto"
                      : c.training_split == TrainingSplit::Contiguous ? "contiguous"
                                                                      : "lead_last";
  return {{"profile", c.profile},
          {"mode", to_string(c.mode)},
          {"simulate_accelerated", c.simulate_accelerated},
          {"seed", c.seed},
          {"schedule",
           {{"time_points", c.time_points},
            {"tr_ms", c.tr_ms},
            {"training_length", c.training_length},
            {"radii",
             {{"center", c.radii.center},
              {"large_center", c.radii.large_center},
              {"tiny_center", c.radii.tiny_center},
              {"peripheral", c.radii.peripheral}}}}},
          {"grid", {{"dims", c.dims}, {"fov_mm", c.fov_mm}}},
          {"phantom", {{"noise_sigma", c.noise_sigma}, {"diaphragm", c.diaphragm}, {"edge_width_vox", c.edge_width_vox}}},
          {"motion",
           {{"amplitude_vox", c.amplitude_vox},
            {"period_tp", c.period_tp},
            {"drift_vox_per_tp", c.drift_vox_per_tp},
            {"amplitude_jitter", c.amplitude_jitter},
            {"envelope_width", c.envelope_width},
            {"intra_timepoint_motion", c.intra_timepoint_motion},
            {"per_line", c.per_line}}},
          {"registration",
           {{"control_point_spacing_vox", c.control_point_spacing_vox},
            {"levels", c.levels},
            {"iterations", c.iterations},
            {"step_size", c.step_size},
            {"tv_weight", c.tv_weight},
            {"metric", to_string(c.metric)},
            {"use_mask", c.use_mask}}},
          {"model", {{"d_pca", c.d_pca}, {"ridge", c.ridge}, {"training_split", split}}},
          {"reconstruction",
           {{"reference", c.reference}, {"delta", c.delta}, {"deterministic_reduction", c.deterministic_reduction}}},
          {"report",
           {{"variants", variants},
            {"export_slices", c.export_slices},
            {"slice_axis", c.slice_axis},
            {"slice_indices", c.slice_indices}}},
          {"output_dir", c.output_dir}};
}

namespace detail {

/// Overlays `in` onto `base`, rejecting keys that `base` does not have.
inline void overlay(nlohmann::json& base, const nlohmann::json& in, const std::string& prefix) {
  if (!in.is_object()) throw ConfigError(prefix, "expected an object");
  for (auto it = in.begin(); it != in.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(key, "unknown key");
    auto& slot = base[it.key()];
    if (slot.is_object())
      overlay(slot, it.value(), key);
    else
      slot = it.value();
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path) {
  const nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    node = &node->at(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path, "wrong type (" + std::string(node->type_name()) + ")");
  }
}

inline void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace detail

inline void validate(const PipelineConfig& c) {
  using detail::require;
  for (int d = 0; d < 3; ++d) {
    require(c.dims[d] >= 8 && c.dims[d] % 2 == 0, "grid.dims", "each dimension must be even and >= 8");
    require(c.fov_mm[d] > 0.0, "grid.fov_mm", "must be positive");
  }
  require(c.time_points >= 2, "schedule.time_points", "must be >= 2");
  require(c.tr_ms > 0.0, "schedule.tr_ms", "must be positive");
  require(c.training_length >= 2 && c.training_length < c.time_points, "schedule.training_length",
          "must be in [2, time_points)");
  require(c.radii.center >= 1, "schedule.radii.center", "must be >= 1");
  require(c.radii.large_center >= 1, "schedule.radii.large_center", "must be >= 1");
  require(c.radii.tiny_center >= 1, "schedule.radii.tiny_center", "must be >= 1");
  require(c.radii.peripheral >= 1, "schedule.radii.peripheral", "must be >= 1");
  require(c.radii.tiny_center <= c.radii.center, "schedule.radii.tiny_center", "must not exceed the center radius");
  require(c.radii.center <= c.radii.large_center, "schedule.radii.center", "must not exceed the large center radius");
  require(c.noise_sigma >= 0.0, "phantom.noise_sigma", "must be >= 0");
  require(c.edge_width_vox > 0.0, "phantom.edge_width_vox", "must be positive");
  require(c.diaphragm > -1.0 && c.diaphragm < 1.0, "phantom.diaphragm", "must be in (-1, 1)");
  require(c.period_tp > 2.0, "motion.period_tp", "must be > 2");
  require(c.amplitude_jitter >= 0.0 && c.amplitude_jitter < 1.0, "motion.amplitude_jitter", "must be in [0, 1)");
  require(c.envelope_width > 0.0, "motion.envelope_width", "must be positive");
  require(c.control_point_spacing_vox >= 2, "registration.control_point_spacing_vox", "must be >= 2");
  require(c.levels >= 1 && c.levels <= 5, "registration.levels", "must be in [1, 5]");
  require(c.iterations >= 1, "registration.iterations", "must be >= 1");
  require(c.step_size > 0.0 && c.step_size <= 0.4, "registration.step_size", "must be in (0, 0.4]");
  require(c.tv_weight >= 0.0, "registration.tv_weight", "must be >= 0");
  require(c.d_pca >= 1, "model.d_pca", "must be >= 1");
  require(c.ridge >= 0.0, "model.ridge", "must be >= 0");
  const int n_train = c.training_length;
  require(c.d_pca <= n_train - 1, "model.d_pca", "must be <= training_length - 1");
  require(c.reference >= 1 && c.reference <= c.time_points, "reconstruction.reference", "must be in [1, time_points]");
  require(c.delta >= 0.0, "reconstruction.delta", "must be >= 0");
  require(!c.variants.empty(), "report.variants", "must not be empty");
  require(c.slice_axis >= 0 && c.slice_axis <= 2, "report.slice_axis", "must be 0, 1 or 2");
  for (int i : c.slice_indices)
    require(i >= 0 && i < c.dims[c.slice_axis], "report.slice_indices", "index out of range");
  if (c.mode == AcquisitionMode::Accelerated) {
    require(c.training_split != TrainingSplit::LeadLast, "model.training_split",
            "lead_last applies to simulated acceleration of a standard acquisition");
    for (auto v : c.variants)
      require(v == Variant::Static || v == Variant::Accelerated, "report.variants",
              "an accelerated acquisition supports only static and accelerated");
  } else if (!c.simulate_accelerated) {
    require(!c.wants(Variant::Accelerated), "report.variants", "accelerated needs simulate_accelerated");
  }
}

/// Parses a config document over the defaults of its profile. The profile
/// comes from `profile_override`, then the document's "profile" key, then
/// "paper".
inline PipelineConfig config_from_json(const nlohmann::json& in, std::optional<std::string> profile_override = {}) {
  using detail::get_field;
  if (!in.is_object()) throw ConfigError("", "config must be a JSON object");
  std::string profile = "paper";
  if (in.contains("profile")) {
    if (!in.at("profile").is_string()) throw ConfigError("profile", "must be a string");
    profile = in.at("profile").get<std::string>();
  }
  if (profile_override) profile = *profile_override;
  PipelineConfig c = profile_defaults(profile);
  nlohmann::json j = config_to_json(c);
  detail::overlay(j, in, "");
  j["profile"] = c.profile;

  try {
    c.mode = acquisition_mode_from_string(get_field<std::string>(j, "mode"));
  } catch (const ArgumentError& e) {
    throw ConfigError("mode", e.what());
  }
  c.simulate_accelerated = get_field<bool>(j, "simulate_accelerated");
  c.seed = get_field<std::uint64_t>(j, "seed");
  c.time_points = get_field<int>(j, "schedule.time_points");
  c.tr_ms = get_field<double>(j, "schedule.tr_ms");
  c.training_length = get_field<int>(j, "schedule.training_length");
  c.radii.center = get_field<int>(j, "schedule.radii.center");
  c.radii.large_center = get_field<int>(j, "schedule.radii.large_center");
  c.radii.tiny_center = get_field<int>(j, "schedule.radii.tiny_center");
  c.radii.peripheral = get_field<int>(j, "schedule.radii.peripheral");
  c.dims = get_field<Index3>(j, "grid.dims");
  c.fov_mm = get_field<Vec3>(j, "grid.fov_mm");
  c.noise_sigma = get_field<double>(j, "phantom.noise_sigma");
  c.diaphragm = get_field<double>(j, "phantom.diaphragm");
  c.edge_width_vox = get_field<double>(j, "phantom.edge_width_vox");
  c.amplitude_vox = get_field<Vec3>(j, "motion.amplitude_vox");
  c.period_tp = get_field<double>(j, "motion.period_tp");
  c.drift_vox_per_tp = get_field<Vec3>(j, "motion.drift_vox_per_tp");
  c.amplitude_jitter = get_field<double>(j, "motion.amplitude_jitter");
  c.envelope_width = get_field<double>(j, "motion.envelope_width");
  c.intra_timepoint_motion = get_field<bool>(j, "motion.intra_timepoint_motion");
  c.per_line = get_field<bool>(j, "motion.per_line");
  c.control_point_spacing_vox = get_field<int>(j, "registration.control_point_spacing_vox");
  c.levels = get_field<int>(j, "registration.levels");
  c.iterations = get_field<int>(j, "registration.iterations");
  c.step_size = get_field<double>(j, "registration.step_size");
  c.tv_weight = get_field<double>(j, "registration.tv_weight");
  try {
    c.metric = metric_from_string(get_field<std::string>(j, "registration.metric"));
  } catch (const ArgumentError& e) {
    throw ConfigError("registration.metric", e.what());
  }
  c.use_mask = get_field<bool>(j, "registration.use_mask");
  c.d_pca = get_field<int>(j, "model.d_pca");
  c.ridge = get_field<double>(j, "model.ridge");
  const auto split = get_field<std::string>(j, "model.training_split");
  if (split == "auto")
    c.training_split = TrainingSplit::Auto;
  else if (split == "contiguous")
    c.training_split = TrainingSplit::Contiguous;
  else if (split == "lead_last")
    c.training_split = TrainingSplit::LeadLast;
  else
    throw ConfigError("model.training_split", "must be auto, contiguous or lead_last");
  c.reference = get_field<int>(j, "reconstruction.reference");
  c.delta = get_field<double>(j, "reconstruction.delta");
  c.deterministic_reduction = get_field<bool>(j, "reconstruction.deterministic_reduction");
  c.variants.clear();
  for (const auto& s : get_field<std::vector<std::string>>(j, "report.variants")) {
    try {
      const Variant v = variant_from_string(s);
      if (!c.wants(v)) c.variants.push_back(v);
    } catch (const ArgumentError& e) {
      throw ConfigError("report.variants", e.what());
    }
  }
  c.export_slices = get_field<bool>(j, "report.export_slices");
  c.slice_axis = get_field<int>(j, "report.slice_axis");
  c.slice_indices = get_field<std::vector<int>>(j, "report.slice_indices");
  c.output_dir = get_field<std::string>(j, "output_dir");
  validate(c);
  return c;
}

inline PipelineConfig read_config(const std::filesystem::path& path, std::optional<std::string> profile_override = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", "parse error in " + path.string() + ": " + e.what());
  } catch (const ArtifactError& e) {
    throw ConfigError("", e.what());
  }
  return config_from_json(j, std::move(profile_override));
}

/// Canonical text form: every key present, fixed key order, 2-space indent.
inline std::string canonical_config(const PipelineConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline void write_config(const PipelineConfig& c, const std::filesystem::path& path) {
  io::write_file(path, canonical_config(c));
}

/// Hash of everything that influences artifact content (the output
/// directory and report layout excluded).
inline std::string config_hash(const PipelineConfig& c) {
  auto j = config_to_json(c);
  j.erase("output_dir");
  return io::sha256_hex(j.dump());
}

}  // namespace mocomr
