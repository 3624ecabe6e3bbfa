#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/config.hpp"
#include "mocomr/io.hpp"
#include "mocomr/metrics.hpp"
#include "mocomr/motion_model.hpp"
#include "mocomr/phantom.hpp"
#include "mocomr/reconstruction.hpp"
#include "mocomr/registration.hpp"
#include "mocomr/sampling.hpp"

namespace mocomr {

namespace fs = std::filesystem;
using nlohmann::json;

/// Checksums of every artifact written into an output directory, keyed by
/// file name, for the configuration hash that produced them.
class Manifest {
 public:
  Manifest(fs::path dir, std::string config_hash) : dir_(std::move(dir)), hash_(std::move(config_hash)) {
    const fs::path p = dir_ / "manifest.json";
    if (!fs::exists(p)) return;
    const json j = json::parse(io::read_text(p));
    if (j.value("config_hash", "") != hash_) return;
    for (auto it = j.at("artifacts").begin(); it != j.at("artifacts").end(); ++it) prior_[it.key()] = it.value();
    current_ = prior_;
  }

  /// Records `sum` for `name`; a different checksum for the same
  /// configuration means a stage is not deterministic.
  void record(const std::string& name, const std::string& sum) {
    const auto it = prior_.find(name);
    if (it != prior_.end() && it->second != sum)
      throw NondeterminismError("artifact " + name + " changed on re-run with identical configuration (" +
                                it->second.substr(0, 12) + " -> " + sum.substr(0, 12) + ")");
    current_[name] = sum;
    save();
  }

  std::optional<std::string> checksum(const std::string& name) const {
    const auto it = current_.find(name);
    if (it == current_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, std::string>& artifacts() const noexcept { return current_; }

 private:
  void save() const {
    json a = json::object();
    for (const auto& [k, v] : current_) a[k] = v;
    io::write_file(dir_ / "manifest.json", json{{"config_hash", hash_}, {"artifacts", a}}.dump(2) + "\n");
  }

  fs::path dir_;
  std::string hash_;
  std::map<std::string, std::string> prior_, current_;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Shared state of the pipeline stages for one output directory.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, fs::path out)
      : cfg_(std::move(cfg)), out_(std::move(out)), hash_(config_hash(cfg_)), manifest_(prepare(out_, hash_), hash_) {
    write_text("config.json", canonical_config(cfg_));
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const fs::path& out() const noexcept { return out_; }
  const Manifest& manifest() const noexcept { return manifest_; }

  // ---------------------------------------------------------------- simulate
  void simulate() {
    Stopwatch sw;
    const PatchSchedule sched = build_schedule(cfg_.schedule_params());
    const PhantomSpec spec = cfg_.phantom();
    AcquireOptions ao;
    ao.intra_timepoint_motion = cfg_.intra_timepoint_motion;
    ao.per_line = cfg_.per_line;
    ao.seed = cfg_.seed;
    const AcquisitionRecord acq = acquire(spec, cfg_.motion(), sched, ao);
    manifest_.record("acquisition.bin", io::write_acquisition(acq, out_ / "acquisition.bin"));
    record_sidecar("acquisition.bin");
    write_volume_artifact("reference.bin", reference_image(spec));
    write_volume_artifact("mask.bin", body_mask(spec));
    write_text("schedule.json", timing_json(sched).dump(2) + "\n");
    add_timing("simulate", sw.seconds());
  }

  // ------------------------------------------------------------------- train
  void train() {
    Stopwatch sw;
    const AcquisitionRecord acq = load_acquisition();
    const auto frames = training_frames(acq);
    const RegParams rp = registration_params();
    const int r = reference_frame(acq);
    const RealVolume fixed = center_image(acq, r);
    const BSplineLayout layout = BSplineLayout::make(acq.grid(), rp.control_point_spacing_vox);

    std::vector<std::vector<double>> coef;
    std::vector<Eigen::VectorXd> X, Y;
    const Patch tiny = Patch::make(PatchKind::TinyCenter, {0, 0}, cfg_.radii.tiny_center, acq.grid());
    for (int t : frames) {
      coef.push_back(register_frame(acq, fixed, r, t, rp, layout));
      X.push_back(vectorize_subpatch(acq.patch(t, 0), acq.samples(t, 0), tiny, acq.grid().nx()));
      Y.push_back(Eigen::Map<const Eigen::VectorXd>(coef.back().data(), static_cast<Eigen::Index>(coef.back().size())));
    }
    MotionModel model = train_motion_model(X, Y, layout, cfg_.d_pca, cfg_.ridge, cfg_.radii.tiny_center);
    model.seed = cfg_.seed;
    io::save_model(model, out_ / "model.bin");
    manifest_.record("model.bin", io::sha256_hex(io::read_file(out_ / "model.bin")));
    record_sidecar("model.bin");
    json info = {{"frames", frames}, {"reference", r}, {"source", "registered"}};
    manifest_.record("training_fields.bin",
                     io::write_field_sequence(BSplineFieldSequence(layout, coef), out_ / "training_fields.bin", info));
    record_sidecar("training_fields.bin");
    add_timing("train", sw.seconds());
  }

  // ------------------------------------------------------------- reconstruct
  void reconstruct(Variant v) {
    if (!variant_allowed(v))
      throw ConfigError("variant", std::string("variant ") + to_string(v) + " is not available for this configuration");
    Stopwatch sw;
    const AcquisitionRecord acq = load_acquisition();
    const int T = acq.time_points();
    ReconOptions ro;
    ro.reference = reference_frame(acq);
    ro.delta = cfg_.delta;
    ro.deterministic_reduction = cfg_.deterministic_reduction;
    json sources = json::object();

    std::optional<BSplineFieldSequence> fields;
    std::string source = "none";
    switch (v) {
      case Variant::Static:
        break;
      case Variant::NonRigid:
      case Variant::Shift:
        fields = registered_fields(acq);
        source = "registered";
        ro.shift_correction = v == Variant::Shift;
        sources["registered"] = T;
        break;
      case Variant::Accelerated: {
        fields = predicted_fields(acq, sources);
        source = "registered+predicted";
        ro.shift_correction = cfg_.delta > 0.0;
        break;
      }
    }
    const std::string name = to_string(v);
    if (fields) {
      const std::string file = "fields_" + name + ".bin";
      manifest_.record(file, io::write_field_sequence(*fields, out_ / file, {{"source", source}}));
      record_sidecar(file);
      fields = io::read_field_sequence(out_ / file);
    }

    const AccumulationResult res = fields ? accumulate(acq, *fields, ro, source)
                                          : accumulate(acq, ZeroFieldSequence(acq.grid(), T), ro, "zero");
    write_volume_artifact("kspace_" + name + ".bin", res.kspace);
    write_volume_artifact("weights_" + name + ".bin", res.weights.count_volume());
    write_volume_artifact("image_" + name + ".bin", reconstruct_image(res.kspace));
    json log = res.log.to_json();
    log["variant"] = name;
    log["frames_by_source"] = sources;
    write_text("log_" + name + ".json", log.dump(2) + "\n");
    add_timing(std::string("reconstruct_") + name, sw.seconds());
  }

  // ---------------------------------------------------------------- evaluate
  json evaluate() {
    Stopwatch sw;
    const AcquisitionRecord acq = load_acquisition();
    const RealVolume reference = read_volume_artifact("reference.bin");
    const RealVolume mask = read_volume_artifact("mask.bin");
    const GridSpec& g = acq.grid();
    const MotionSpec motion = cfg_.motion();

    json report;
    report["format"] = "mocomr-run-report";
    report["version"] = 1;
    report["timing"] = timing_json(acq.schedule);

    json rmse_table = json::object(), tv_table = json::object(), tv_mask_table = json::object();
    std::map<std::string, RealVolume> images;
    for (Variant v : cfg_.variants) {
      const std::string name = to_string(v);
      if (!manifest_.checksum("image_" + name + ".bin")) continue;
      images.emplace(name, read_volume_artifact("image_" + name + ".bin"));
      const RealVolume& im = images.at(name);
      rmse_table[name] = rmse(im, reference);
      tv_table[name] = total_variation(im);
      tv_mask_table[name] = total_variation(im, mask);
    }
    report["rmse_vs_reference"] = rmse_table;
    report["tv"] = tv_table;
    report["tv_body"] = tv_mask_table;
    report["tv_reference"] = total_variation(reference);

    // Motion estimates against the ground-truth correction at each frame's center patch.
    struct Estimate {
      std::string key;
      BSplineFieldSequence seq;
      std::vector<char> use;
      std::vector<double> pooled, frame_means;
    };
    std::vector<Estimate> estimates;
    const auto train = training_frames(acq);
    for (const char* name : {"nonrigid", "accelerated"}) {
      const std::string file = std::string("fields_") + name + ".bin";
      if (!manifest_.checksum(file)) continue;
      const bool predicted = std::string(name) == "accelerated";
      Estimate e{predicted ? "prediction_error" : "registration_error", io::read_field_sequence(checked(file)),
                 std::vector<char>(static_cast<std::size_t>(acq.time_points()), 0), {}, {}};
      for (int t = 1; t <= acq.time_points(); ++t) {
        const bool in_train = std::find(train.begin(), train.end(), t) != train.end();
        e.use[static_cast<std::size_t>(t - 1)] = predicted ? !in_train : t != reference_frame(acq);
      }
      estimates.push_back(std::move(e));
    }
    for (int t = 1; t <= acq.time_points() && !estimates.empty(); ++t) {
      std::optional<DisplacementField> truth;
      for (auto& e : estimates) {
        if (!e.use[static_cast<std::size_t>(t - 1)]) continue;
        if (!truth) truth = correction_field(motion, acq.samples(t, 0).tau, g);
        const auto err = endpoint_errors_mm(e.seq.at(t), *truth, mask);
        e.frame_means.push_back(error_stats(err).mean_mm);
        e.pooled.insert(e.pooled.end(), err.begin(), err.end());
      }
    }
    for (const auto& e : estimates) {
      if (e.pooled.empty()) continue;
      const ErrorStats s = error_stats(e.pooled);
      const double vox = g.spacing()[0];
      json j = s.to_json();
      j["frames"] = e.frame_means.size();
      j["mean_vox"] = s.mean_mm / vox;
      j["p95_vox"] = s.p95_mm / vox;
      j["max_vox"] = s.max_mm / vox;
      j["worst_frame_mean_mm"] = *std::max_element(e.frame_means.begin(), e.frame_means.end());
      report[e.key] = j;
    }

    if (images.count("shift") && images.count("nonrigid"))
      report["tv_change"] = tv_change(images.at("shift"), images.at("nonrigid"), mask, "shift", "nonrigid");
    else if (images.count("accelerated") && images.count("static"))
      report["tv_change"] = tv_change(images.at("accelerated"), images.at("static"), mask, "accelerated", "static");

    json streams = json::array({"schedule.peripheral", "motion.jitter", "acquire.noise"});
    report["provenance"] = {{"config_hash", hash_},
                            {"seed", cfg_.seed},
                            {"random_streams", streams},
                            {"profile", cfg_.profile},
                            {"timings_file", "timings.json"}};
    json artifacts = json::object();
    for (const auto& [k, sum] : manifest_.artifacts())
      if (k.rfind("report", 0) != 0 && k.rfind("slices/", 0) != 0) artifacts[k] = sum;
    report["provenance"]["artifacts"] = artifacts;
    verify_artifacts(artifacts);

    if (cfg_.export_slices) {
      for (const auto& [name, im] : images) {
        std::vector<int> idx = cfg_.slice_indices;
        if (idx.empty()) idx.push_back(g.dims()[cfg_.slice_axis] / 2);
        for (const auto& p : export_slices(im, cfg_.slice_axis, idx, out_ / "slices" / name))
          manifest_.record("slices/" + p.filename().string(), io::sha256_hex(io::read_file(p)));
      }
    }
    write_text("report.json", report.dump(2) + "\n");
    add_timing("evaluate", sw.seconds());
    return report;
  }

  void run() {
    simulate();
    if (needs_model()) train();
    for (Variant v : cfg_.variants) reconstruct(v);
    evaluate();
  }

  /// 8-bit PGM slices windowed to [0, 99.5th percentile of the volume].
  static std::vector<fs::path> export_slices(const RealVolume& v, int axis, const std::vector<int>& indices,
                                             const fs::path& prefix) {
    const GridSpec& g = v.grid();
    if (axis < 0 || axis > 2) throw ArgumentError("export_slices: axis must be 0, 1 or 2");
    for (int i : indices)
      if (i < 0 || i >= g.dims()[axis])
        throw ArgumentError("export_slices: index " + std::to_string(i) + " out of range for axis " +
                            std::to_string(axis));
    const double hi = percentile(v.data(), 0.995);
    const int a0 = axis == 0 ? 1 : 0;
    const int a1 = axis == 2 ? 1 : 2;
    const int rows = g.dims()[a0], cols = g.dims()[a1];
    std::vector<fs::path> paths;
    for (int idx : indices) {
      std::string head = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
      io::Bytes b(head.begin(), head.end());
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          int p[3];
          p[axis] = idx;
          p[a0] = r;
          p[a1] = c;
          b.push_back(gray_level(v.at(p[0], p[1], p[2]), hi));
        }
      const fs::path path = prefix.string() + "_axis" + std::to_string(axis) + "_" + std::to_string(idx) + ".pgm";
      io::write_file(path, b);
      paths.push_back(path);
    }
    return paths;
  }

  static std::uint8_t gray_level(double value, double hi) {
    if (!(hi > 0.0)) return 0;
    const double s = std::clamp(value / hi, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * s));
  }

 private:
  static fs::path prepare(const fs::path& out, const std::string&) {
    fs::create_directories(out);
    return out;
  }

  bool needs_model() const { return cfg_.wants(Variant::Accelerated); }

  bool variant_allowed(Variant v) const {
    if (cfg_.mode == AcquisitionMode::Accelerated) return v == Variant::Static || v == Variant::Accelerated;
    return v != Variant::Accelerated || cfg_.simulate_accelerated;
  }

  fs::path checked(const std::string& name) const {
    const fs::path p = out_ / name;
    if (!fs::exists(p) || !manifest_.checksum(name))
      throw ArtifactError("missing artifact " + name + " in " + out_.string() + upstream_hint(name));
    return p;
  }

  static std::string upstream_hint(const std::string& name) {
    if (name == "acquisition.bin" || name == "reference.bin" || name == "mask.bin") return " (run simulate first)";
    if (name == "model.bin" || name == "training_fields.bin") return " (run train first)";
    return "";
  }

  AcquisitionRecord load_acquisition() const { return io::read_acquisition(checked("acquisition.bin")); }

  int reference_frame(const AcquisitionRecord&) const {
    return cfg_.mode == AcquisitionMode::Accelerated ? 1 : cfg_.reference;
  }

  RegParams registration_params() const {
    RegParams rp = cfg_.registration();
    if (cfg_.use_mask) rp.mask = read_volume_artifact("mask.bin");
    return rp;
  }

  /// Training time points: the contiguous training phase of an accelerated
  /// acquisition, or the leading and last halves of a standard one.
  std::vector<int> training_frames(const AcquisitionRecord& acq) const {
    const int T = acq.time_points();
    const int L = cfg_.training_length;
    std::vector<int> f;
    const bool lead_last = cfg_.training_split == TrainingSplit::LeadLast ||
                           (cfg_.training_split == TrainingSplit::Auto && cfg_.mode == AcquisitionMode::Standard);
    if (lead_last) {
      const int lead = (L + 1) / 2;
      for (int t = 1; t <= lead; ++t) f.push_back(t);
      for (int t = T - (L - lead) + 1; t <= T; ++t) f.push_back(t);
    } else {
      for (int t = 1; t <= L; ++t) f.push_back(t);
    }
    return f;
  }

  static RealVolume center_image(const AcquisitionRecord& acq, int t) {
    return zero_filled_recon(acq.patch_kspace(t, 0), acq.patch(t, 0));
  }

  static std::vector<double> register_frame(const AcquisitionRecord& acq, const RealVolume& fixed, int r, int t,
                                            const RegParams& rp, const BSplineLayout& layout) {
    if (t == r) return std::vector<double>(layout.coefficient_count(), 0.0);
    if (acq.patch(t, 0).kind != acq.patch(r, 0).kind)
      throw ArgumentError("registration needs equal center patches at t=" + std::to_string(t) + " and r=" +
                          std::to_string(r));
    return register_bspline(fixed, center_image(acq, t), rp).field.coefficients;
  }

  BSplineFieldSequence registered_fields(const AcquisitionRecord& acq) {
    const std::string name = "fields_registered.bin";
    if (manifest_.checksum(name) && fs::exists(out_ / name)) return io::read_field_sequence(checked(name));
    const RegParams rp = registration_params();
    const int r = reference_frame(acq);
    const RealVolume fixed = center_image(acq, r);
    const BSplineLayout layout = BSplineLayout::make(acq.grid(), rp.control_point_spacing_vox);
    std::vector<std::vector<double>> coef;
    for (int t = 1; t <= acq.time_points(); ++t) coef.push_back(register_frame(acq, fixed, r, t, rp, layout));
    manifest_.record(name, io::write_field_sequence(BSplineFieldSequence(layout, coef), out_ / name,
                                                    {{"source", "registered"}, {"reference", r}}));
    record_sidecar(name);
    return io::read_field_sequence(out_ / name);
  }

  BSplineFieldSequence predicted_fields(const AcquisitionRecord& acq, json& sources) const {
    const MotionModel model = io::load_model(checked("model.bin"));
    const BSplineFieldSequence train = io::read_field_sequence(checked("training_fields.bin"));
    const auto frames = training_frames(acq);
    if (static_cast<int>(frames.size()) != train.size())
      throw ArtifactError("training_fields.bin does not match the configured training split");
    if (!(model.layout == train.layout())) throw ArtifactError("model.bin and training_fields.bin disagree on the lattice");
    const Patch tiny = model.tiny_patch();
    std::vector<std::vector<double>> coef(static_cast<std::size_t>(acq.time_points()));
    int registered = 0, predicted = 0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      coef[static_cast<std::size_t>(frames[k] - 1)] = train.coefficients(static_cast<int>(k) + 1);
      ++registered;
    }
    for (int t = 1; t <= acq.time_points(); ++t) {
      auto& c = coef[static_cast<std::size_t>(t - 1)];
      if (!c.empty()) continue;
      const Eigen::VectorXd y = predict_coefficients(model, vectorize_subpatch(acq.patch(t, 0), acq.samples(t, 0), tiny,
                                                                               acq.grid().nx()));
      c.assign(y.data(), y.data() + y.size());
      ++predicted;
    }
    sources["registered"] = registered;
    sources["predicted"] = predicted;
    return BSplineFieldSequence(model.layout, std::move(coef));
  }

  /// One-sample t-test on per-slice TV differences (a - b) along the
  /// configured slice axis, within the body mask.
  json tv_change(const RealVolume& a, const RealVolume& b, const RealVolume& mask, const std::string& na,
                 const std::string& nb) const {
    const GridSpec& g = a.grid();
    const int axis = cfg_.slice_axis;
    std::vector<double> diffs;
    for (int s = 0; s < g.dims()[axis]; ++s) {
      RealVolume sm(g);
      bool any = false;
      for (int x = 0; x < g.nx(); ++x)
        for (int y = 0; y < g.ny(); ++y)
          for (int z = 0; z < g.nz(); ++z) {
            const int p[3] = {x, y, z};
            if (p[axis] != s) continue;
            const std::size_t i = g.index(x, y, z);
            sm[i] = mask[i];
            any |= mask[i] > 0.0;
          }
      if (!any) continue;
      diffs.push_back(total_variation(a, sm) - total_variation(b, sm));
    }
    json j = {{"comparison", na + " - " + nb}, {"unit", "slice"}, {"slices", diffs.size()}};
    try {
      j["test"] = one_sample_ttest(diffs, 0.0).to_json();
    } catch (const Error& e) {
      j["test"] = nullptr;
      j["note"] = e.what();
    }
    return j;
  }

  void verify_artifacts(const json& artifacts) const {
    for (auto it = artifacts.begin(); it != artifacts.end(); ++it) {
      const fs::path p = out_ / it.key();
      if (!fs::exists(p)) throw ArtifactError("report references missing artifact " + it.key());
      if (io::sha256_hex(io::read_file(p)) != it.value().get<std::string>())
        throw ArtifactError("artifact checksum mismatch: " + it.key());
    }
  }

  json timing_json(const PatchSchedule& s) const {
    const TimingReport tr = schedule_timing(s);
    json phases = json::object();
    for (const auto& [k, v] : tr.phase_seconds)
      phases[k] = {{"seconds", v}, {"minutes_displayed", TimingReport::displayed_minutes(v)}};
    return {{"patch_ms", tr.patch_ms},
            {"phases", phases},
            {"total_seconds", tr.total_seconds},
            {"total_minutes_displayed", TimingReport::displayed_minutes(tr.total_seconds)}};
  }

  void write_volume_artifact(const std::string& name, const RealVolume& v) {
    manifest_.record(name, io::write_volume(v, out_ / name));
    record_sidecar(name);
  }
  void write_volume_artifact(const std::string& name, const ComplexVolume& v) {
    manifest_.record(name, io::write_volume(v, out_ / name));
    record_sidecar(name);
  }

  RealVolume read_volume_artifact(const std::string& name) const { return io::read_real_volume(checked(name)); }

  void record_sidecar(const std::string& name) {
    const std::string side = name + ".json";
    manifest_.record(side, io::sha256_hex(io::read_file(out_ / side)));
  }

  void write_text(const std::string& name, const std::string& text) {
    io::write_file(out_ / name, text);
    manifest_.record(name, io::sha256_hex(text));
  }

  void add_timing(const std::string& stage, double seconds) const {
    const fs::path p = out_ / "timings.json";
    json j = json::object();
    if (fs::exists(p)) j = json::parse(io::read_text(p));
    j[stage] = seconds;
    io::write_file(p, j.dump(2) + "\n");
  }

  PipelineConfig cfg_;
  fs::path out_;
  std::string hash_;
  Manifest manifest_;
};

}  // namespace mocomr
