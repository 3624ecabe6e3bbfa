#pragma once

#include <algorithm>
#include <array>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mocomr/bspline.hpp"
#include "mocomr/fft.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/phantom.hpp"
#include "mocomr/sampling.hpp"
#include "mocomr/warp.hpp"

namespace mocomr {

/// Weights (w_prev, w_t, w_next) of the second-order Taylor step
/// u(t + delta) ~ u_t + delta * du_t + delta^2 / 2 * ddu_t with central
/// differences. At the sequence ends the derivative is one-sided and the
/// curvature term is dropped.
inline std::array<double, 3> shift_weights(int T, int t, double delta) {
  if (T < 1) throw ArgumentError("shift_correct: empty field sequence");
  if (t < 1 || t > T) throw ArgumentError("shift_correct: t out of range [1, " + std::to_string(T) + "]");
  if (!std::isfinite(delta)) throw ArgumentError("shift_correct: delta must be finite");
  if (T == 1) return {0.0, 1.0, 0.0};
  if (t == 1) return {0.0, 1.0 - delta, delta};
  if (t == T) return {-delta, 1.0 + delta, 0.0};
  const double h = 0.5 * delta * delta;
  return {-0.5 * delta + h, 1.0 - delta * delta, 0.5 * delta + h};
}

namespace detail {

inline void combine3(const std::array<double, 3>& w, const std::vector<double>* prev, const std::vector<double>& cur,
                     const std::vector<double>* next, std::vector<double>& out) {
  out.resize(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) {
    double v = w[1] * cur[i];
    if (prev) v += w[0] * (*prev)[i];
    if (next) v += w[2] * (*next)[i];
    out[i] = v;
  }
}

}  // namespace detail

/// u(t + delta) from a 1-based sequence of dense fields stored 0-based.
inline DisplacementField shift_correct(const std::vector<DisplacementField>& fields, int t, double delta) {
  const int T = static_cast<int>(fields.size());
  const auto w = shift_weights(T, t, delta);
  const auto& cur = fields[static_cast<std::size_t>(t - 1)];
  const DisplacementField* prev = t > 1 ? &fields[static_cast<std::size_t>(t - 2)] : nullptr;
  const DisplacementField* next = t < T ? &fields[static_cast<std::size_t>(t)] : nullptr;
  if (prev) require_same_grid(prev->grid(), cur.grid(), "shift_correct");
  if (next) require_same_grid(next->grid(), cur.grid(), "shift_correct");
  DisplacementField out(cur.grid());
  detail::combine3(w, prev ? &prev->data() : nullptr, cur.data(), next ? &next->data() : nullptr, out.data());
  return out;
}

/// Displacement fields u_1..u_T indexed by time point.
class FieldSequence {
 public:
  virtual ~FieldSequence() = default;
  virtual int size() const = 0;
  virtual const GridSpec& grid() const = 0;
  virtual DisplacementField at(int t) const = 0;
  virtual bool is_zero(int t) const { return at(t).is_zero(); }
  /// u(t + delta), shift-corrected.
  virtual DisplacementField shifted(int t, double delta) const {
    const int T = size();
    const auto w = shift_weights(T, t, delta);
    const DisplacementField cur = at(t);
    std::optional<DisplacementField> prev, next;
    if (w[0] != 0.0) prev = at(t - 1);
    if (w[2] != 0.0) next = at(t + 1);
    DisplacementField out(cur.grid());
    detail::combine3(w, prev ? &prev->data() : nullptr, cur.data(), next ? &next->data() : nullptr, out.data());
    return out;
  }

 protected:
  void check(int t) const {
    if (t < 1 || t > size())
      throw ArgumentError("missing field for time point " + std::to_string(t) + " (sequence has " +
                          std::to_string(size()) + ")");
  }
};

class ZeroFieldSequence final : public FieldSequence {
 public:
  ZeroFieldSequence(GridSpec grid, int T) : grid_(grid), T_(T) {}
  int size() const override { return T_; }
  const GridSpec& grid() const override { return grid_; }
  DisplacementField at(int t) const override {
    check(t);
    return DisplacementField(grid_);
  }
  bool is_zero(int t) const override {
    check(t);
    return true;
  }
  DisplacementField shifted(int t, double) const override { return at(t); }

 private:
  GridSpec grid_;
  int T_;
};

class DenseFieldSequence final : public FieldSequence {
 public:
  explicit DenseFieldSequence(std::vector<DisplacementField> fields) : fields_(std::move(fields)) {
    if (fields_.empty()) throw ArgumentError("field sequence must not be empty");
    for (const auto& f : fields_) require_same_grid(fields_.front().grid(), f.grid(), "field sequence");
  }
  int size() const override { return static_cast<int>(fields_.size()); }
  const GridSpec& grid() const override { return fields_.front().grid(); }
  DisplacementField at(int t) const override {
    check(t);
    return fields_[static_cast<std::size_t>(t - 1)];
  }
  bool is_zero(int t) const override {
    check(t);
    return fields_[static_cast<std::size_t>(t - 1)].is_zero();
  }
  DisplacementField shifted(int t, double delta) const override {
    check(t);
    return shift_correct(fields_, t, delta);
  }

 private:
  std::vector<DisplacementField> fields_;
};

/// Fields stored as B-spline coefficients. Shift correction is linear, so it
/// is applied to coefficients before evaluation.
class BSplineFieldSequence final : public FieldSequence {
 public:
  BSplineFieldSequence(BSplineLayout layout, std::vector<std::vector<double>> coefficients)
      : layout_(std::move(layout)), coef_(std::move(coefficients)) {
    if (coef_.empty()) throw ArgumentError("field sequence must not be empty");
    for (const auto& c : coef_)
      if (c.size() != layout_.coefficient_count())
        throw DimensionError("field sequence: coefficient count does not match control lattice");
  }
  int size() const override { return static_cast<int>(coef_.size()); }
  const GridSpec& grid() const override { return layout_.grid; }
  const BSplineLayout& layout() const noexcept { return layout_; }
  const std::vector<double>& coefficients(int t) const {
    check(t);
    return coef_[static_cast<std::size_t>(t - 1)];
  }
  const std::vector<std::vector<double>>& all_coefficients() const noexcept { return coef_; }
  DisplacementField at(int t) const override { return bspline_to_dense(BSplineField(layout_, coefficients(t))); }
  bool is_zero(int t) const override {
    const auto& c = coefficients(t);
    return std::all_of(c.begin(), c.end(), [](double v) { return v == 0.0; });
  }
  DisplacementField shifted(int t, double delta) const override {
    check(t);
    const int T = size();
    const auto w = shift_weights(T, t, delta);
    std::vector<double> c;
    detail::combine3(w, t > 1 ? &coef_[static_cast<std::size_t>(t - 2)] : nullptr, coef_[static_cast<std::size_t>(t - 1)],
                     t < T ? &coef_[static_cast<std::size_t>(t)] : nullptr, c);
    return bspline_to_dense(BSplineField(layout_, std::move(c)));
  }

 private:
  BSplineLayout layout_;
  std::vector<std::vector<double>> coef_;
};

/// Per-voxel sample counts w and the normalizer W = 1/w (1 where w = 0).
struct WeightVolume {
  GridSpec grid;
  std::vector<double> counts;

  explicit WeightVolume(GridSpec g) : grid(g), counts(g.size(), 0.0) {}
  double normalizer(std::size_t i) const noexcept { return counts[i] > 0.0 ? 1.0 / counts[i] : 1.0; }
  RealVolume count_volume() const { return RealVolume(grid, counts); }
  RealVolume normalizer_volume() const {
    RealVolume v(grid);
    for (std::size_t i = 0; i < counts.size(); ++i) v[i] = normalizer(i);
    return v;
  }
};

struct ReconOptions {
  int reference = 1;
  bool shift_correction = false;
  double delta = 0.5;
  bool deterministic_reduction = true;
  std::optional<std::vector<int>> order;  // processing order of time points; default ascending
};

inline void validate(const ReconOptions& o, int T) {
  if (o.reference < 1 || o.reference > T)
    throw ArgumentError("recon: reference time point must be in [1, " + std::to_string(T) + "]");
  if (!(o.delta >= 0.0) || !std::isfinite(o.delta)) throw ArgumentError("recon: delta must be finite and >= 0");
  if (o.order) {
    std::vector<int> s = *o.order;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (s[static_cast<std::size_t>(i)] != i + 1 || static_cast<int>(s.size()) != T)
        throw ArgumentError("recon: processing order must be a permutation of 1..T");
  }
}

struct AccumulationLog {
  int time_points = 0;
  std::string field_source;
  bool shift_correction = false;
  double delta = 0.0;
  int reference = 1;
  int warps = 0;          // warp + forward transform evaluations
  int direct_copies = 0;  // contributions taken without a warp (zero field)

  nlohmann::json to_json() const {
    return {{"time_points", time_points}, {"field_source", field_source}, {"shift_correction", shift_correction},
            {"delta", delta},             {"reference", reference},       {"warps", warps},
            {"direct_copies", direct_copies}};
  }
};

struct AccumulationResult {
  ComplexVolume kspace;
  WeightVolume weights;
  AccumulationLog log;
};

/// Fields used for one time point: `fields[patch_field[i]]` applies to patch
/// i of the entry. An empty optional is the zero field.
struct EntryFields {
  std::vector<std::optional<DisplacementField>> fields;
  std::vector<std::size_t> patch_field;
};

using EntryFieldFn = std::function<EntryFields(int t)>;

namespace detail {

struct Contribution {
  std::vector<std::vector<Complex>> lines;  // per patch, same layout as PatchSamples
  int warps = 0;
  int copies = 0;
};

inline Contribution contribute(const AcquisitionRecord& acq, int t, const EntryFields& ef) {
  const GridSpec& g = acq.grid();
  const auto& entry = acq.schedule.entry(t);
  const std::size_t np = entry.patches.size();
  if (ef.patch_field.size() != np) throw ArgumentError("accumulate: field assignment does not cover every patch");
  for (std::size_t i = 0; i < np; ++i)
    if (ef.patch_field[i] >= ef.fields.size()) throw ArgumentError("accumulate: patch field index out of range");
  Contribution c;
  c.lines.resize(np);
  std::optional<ComplexVolume> image;
  const int nx = g.nx();
  for (std::size_t f = 0; f < ef.fields.size(); ++f) {
    std::vector<std::size_t> users;
    for (std::size_t i = 0; i < np; ++i)
      if (ef.patch_field[i] == f) users.push_back(i);
    if (users.empty()) continue;
    const auto& field = ef.fields[f];
    if (!field || field->is_zero()) {
      for (std::size_t i : users) c.lines[i] = acq.samples(t, i).lines;
      ++c.copies;
      continue;
    }
    require_same_grid(field->grid(), g, "accumulate");
    if (!image) image = fft3_inverse(acq.partial_kspace(t));
    const ComplexVolume k = fft3_forward(warp_volume(*image, *field));
    ++c.warps;
    for (std::size_t i : users) {
      const auto& pts = entry.patches[i].patch.points;
      auto& out = c.lines[i];
      out.resize(pts.size() * static_cast<std::size_t>(nx));
      for (std::size_t j = 0; j < pts.size(); ++j)
        for (int x = 0; x < nx; ++x) out[j * nx + x] = k[kspace_index(g, x, pts[j])];
    }
  }
  return c;
}

}  // namespace detail

/// K = W sum_t W^t F(F^-1(P_t) o u_t): each time point's partial k-space is
/// warped into the reference state and its own patch lines are summed.
inline AccumulationResult accumulate_entries(const AcquisitionRecord& acq, const EntryFieldFn& fields_for,
                                             const ReconOptions& opts, std::string source = "custom") {
  const int T = acq.time_points();
  validate(opts, T);
  const GridSpec& g = acq.grid();
  std::vector<int> order(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) order[static_cast<std::size_t>(t - 1)] = t;
  if (opts.order) order = *opts.order;

  std::vector<detail::Contribution> contrib(static_cast<std::size_t>(T));
  std::vector<EntryFields> assigned(static_cast<std::size_t>(T));
  for (int t : order) assigned[static_cast<std::size_t>(t - 1)] = fields_for(t);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int n = 0; n < T; ++n) {
    const int t = order[static_cast<std::size_t>(n)];
    try {
      contrib[static_cast<std::size_t>(t - 1)] = detail::contribute(acq, t, assigned[static_cast<std::size_t>(t - 1)]);
    } catch (...) {
#pragma omp critical(mocomr_accumulate_error)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  AccumulationResult r{ComplexVolume(g), WeightVolume(g), {}};
  r.log.time_points = T;
  r.log.field_source = std::move(source);
  r.log.shift_correction = opts.shift_correction;
  r.log.delta = opts.delta;
  r.log.reference = opts.reference;
  std::vector<int> reduce_order = order;
  if (opts.deterministic_reduction) std::sort(reduce_order.begin(), reduce_order.end());
  const int nx = g.nx();
  for (int t : reduce_order) {
    const auto& c = contrib[static_cast<std::size_t>(t - 1)];
    const auto& entry = acq.schedule.entry(t);
    r.log.warps += c.warps;
    r.log.direct_copies += c.copies;
    for (std::size_t i = 0; i < entry.patches.size(); ++i) {
      const auto& pts = entry.patches[i].patch.points;
      for (std::size_t j = 0; j < pts.size(); ++j)
        for (int x = 0; x < nx; ++x) {
          const std::size_t idx = kspace_index(g, x, pts[j]);
          r.kspace[idx] += c.lines[i][j * nx + x];
          r.weights.counts[idx] += 1.0;
        }
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i) r.kspace[i] *= r.weights.normalizer(i);
  return r;
}

/// Accumulation with one field per time point. With shift correction the
/// peripheral patch uses u(t + delta); center patches always use u_t.
inline AccumulationResult accumulate(const AcquisitionRecord& acq, const FieldSequence& fields,
                                     const ReconOptions& opts, std::string source = "custom") {
  const int T = acq.time_points();
  if (fields.size() != T)
    throw ArgumentError("accumulate: " + std::to_string(fields.size()) + " fields for " + std::to_string(T) +
                        " time points");
  require_same_grid(fields.grid(), acq.grid(), "accumulate");
  auto fn = [&](int t) {
    EntryFields ef;
    const auto& entry = acq.schedule.entry(t);
    const bool zero = fields.is_zero(t);
    ef.fields.push_back(zero ? std::nullopt : std::optional<DisplacementField>(fields.at(t)));
    bool has_peripheral = false;
    for (const auto& p : entry.patches) has_peripheral |= !is_center_kind(p.patch.kind);
    const bool shift = opts.shift_correction && opts.delta != 0.0 && has_peripheral;
    if (shift) ef.fields.push_back(fields.shifted(t, opts.delta));
    for (const auto& p : entry.patches) ef.patch_field.push_back(shift && !is_center_kind(p.patch.kind) ? 1 : 0);
    return ef;
  };
  return accumulate_entries(acq, fn, opts, std::move(source));
}

/// Per-patch ground-truth correction fields at each patch's own acquisition
/// time, the ideal that shift correction approximates.
inline EntryFieldFn ground_truth_patch_fields(const AcquisitionRecord& acq, const MotionSpec& m) {
  return [&acq, m](int t) {
    EntryFields ef;
    const auto& entry = acq.schedule.entry(t);
    for (std::size_t i = 0; i < entry.patches.size(); ++i) {
      ef.fields.emplace_back(correction_field(m, acq.samples(t, i).tau, acq.grid()));
      ef.patch_field.push_back(i);
    }
    return ef;
  };
}

/// I_r = |F^-1(K)|.
inline RealVolume reconstruct_image(const ComplexVolume& kspace) {
  kspace.require_finite("reconstruct_image");
  return magnitude(fft3_inverse(kspace));
}

}  // namespace mocomr
