#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mocomr/reconstruction.hpp"

using namespace mocomr;

namespace {

const GridSpec kGrid = GridSpec::from_fov({16, 16, 12}, {400, 400, 275});

std::vector<PhaseEncodePoint> plane_points(const GridSpec& g) {
  std::vector<PhaseEncodePoint> pts;
  for (int ky = -g.ny() / 2 + 1; ky < g.ny() / 2; ++ky)
    for (int kz = -g.nz() / 2 + 1; kz < g.nz() / 2; ++kz) pts.push_back({ky, kz});
  return pts;
}

// Schedule whose entry t holds `copies` identical patches of group t; the
// groups partition the phase plane.
PatchSchedule tiling_schedule(const GridSpec& g, int groups, int copies) {
  ScheduleParams p;
  p.grid = g;
  p.time_points = groups;
  PatchSchedule s;
  s.params = p;
  s.phases.push_back({PhaseName::Standard, 1, groups});
  const auto pts = plane_points(g);
  for (int t = 1; t <= groups; ++t) {
    Patch patch{PatchKind::Peripheral, {0, 0}, 1, {}};
    for (std::size_t i = static_cast<std::size_t>(t - 1); i < pts.size(); i += static_cast<std::size_t>(groups))
      patch.points.push_back(pts[i]);
    ScheduleEntry e;
    e.t = t;
    e.phase = PhaseName::Standard;
    for (int c = 0; c < copies; ++c) e.patches.push_back({patch, 100.0 * c, 100.0});
    s.entries.push_back(e);
  }
  return s;
}

MotionSpec still() {
  MotionSpec m;
  m.amplitude_vox = {0.0, 0.0, 0.0};
  return m;
}

MotionSpec breathing() {
  MotionSpec m;
  m.amplitude_vox = {3.0, 0.3, 0.8};
  m.period_tp = 6.0;
  return m;
}

AcquireOptions frozen() {
  AcquireOptions o;
  o.intra_timepoint_motion = false;
  return o;
}

double max_rel_diff(const ComplexVolume& a, const ComplexVolume& b) {
  double err = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err = std::max(err, std::abs(a[i] - b[i]));
    norm = std::max(norm, std::abs(b[i]));
  }
  return norm > 0.0 ? err / norm : err;
}

double rmse_of(const RealVolume& a, const RealVolume& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::vector<DisplacementField> polynomial_sequence(int T, double a, double b, double c) {
  const GridSpec g({4, 4, 4}, {1, 1, 1});
  std::vector<DisplacementField> seq;
  for (int t = 1; t <= T; ++t) {
    DisplacementField f(g);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        const double s = 1.0 + 0.1 * static_cast<double>(i % 7) - 0.3 * k;
        f.at(i)[k] = s * (a + b * t + c * t * t);
      }
    seq.push_back(f);
  }
  return seq;
}

double poly_error(const DisplacementField& got, double a, double b, double c, double tau) {
  double err = 0.0;
  for (std::size_t i = 0; i < got.voxels(); ++i)
    for (int k = 0; k < 3; ++k) {
      const double s = 1.0 + 0.1 * static_cast<double>(i % 7) - 0.3 * k;
      err = std::max(err, std::abs(got.at(i)[k] - s * (a + b * tau + c * tau * tau)));
    }
  return err;
}

}  // namespace

TEST_CASE("shift correction is exact on low-order trajectories") {
  const int T = 9;
  for (double delta : {0.5, 0.25, 1.0}) {
    const auto cst = polynomial_sequence(T, 2.0, 0.0, 0.0);
    const auto lin = polynomial_sequence(T, 0.5, -0.7, 0.0);
    const auto quad = polynomial_sequence(T, 0.5, -0.7, 0.09);
    for (int t = 1; t <= T; ++t) {
      CHECK(poly_error(shift_correct(cst, t, delta), 2.0, 0.0, 0.0, t + delta) <= 1e-10);
      CHECK(poly_error(shift_correct(lin, t, delta), 0.5, -0.7, 0.0, t + delta) <= 1e-10);
      const auto q = shift_correct(quad, t, delta);
      if (t > 1 && t < T) CHECK(poly_error(q, 0.5, -0.7, 0.09, t + delta) <= 1e-10);
      CHECK(q.all_finite());
    }
  }
  const auto quad = polynomial_sequence(T, 0.5, -0.7, 0.09);
  for (int t = 1; t <= T; ++t) CHECK(shift_correct(quad, t, 0.0).data() == quad[static_cast<std::size_t>(t - 1)].data());
  CHECK(shift_correct({quad[3]}, 1, 0.5).data() == quad[3].data());
}

TEST_CASE("shift weights and boundary fallback") {
  const auto c = shift_weights(10, 5, 0.5);
  CHECK(c[0] == Catch::Approx(-0.125));
  CHECK(c[1] == Catch::Approx(0.75));
  CHECK(c[2] == Catch::Approx(0.375));
  CHECK(c[0] + c[1] + c[2] == Catch::Approx(1.0));
  const auto first = shift_weights(10, 1, 0.5);
  CHECK(first == std::array<double, 3>{0.0, 0.5, 0.5});
  const auto last = shift_weights(10, 10, 0.5);
  CHECK(last == std::array<double, 3>{-0.5, 1.5, 0.0});
  CHECK_THROWS_AS(shift_weights(0, 1, 0.5), ArgumentError);
  CHECK_THROWS_AS(shift_weights(5, 6, 0.5), ArgumentError);
  CHECK_THROWS_AS(shift_weights(5, 0, 0.5), ArgumentError);
  CHECK_THROWS_AS(shift_correct({}, 1, 0.5), ArgumentError);
}

TEST_CASE("field sequences agree on shifted fields") {
  const GridSpec g({8, 8, 8}, {1, 1, 1});
  const auto layout = BSplineLayout::make(g, 4);
  RandomStream rng(3, "test.coef");
  std::vector<std::vector<double>> coef(5, std::vector<double>(layout.coefficient_count()));
  std::vector<DisplacementField> dense;
  for (auto& c : coef) {
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    dense.push_back(bspline_to_dense(BSplineField(layout, c)));
  }
  const BSplineFieldSequence bs(layout, coef);
  const DenseFieldSequence ds(dense);
  for (int t = 1; t <= 5; ++t) {
    const auto a = bs.shifted(t, 0.5), b = ds.shifted(t, 0.5);
    for (std::size_t i = 0; i < a.data().size(); ++i) REQUIRE(std::abs(a.data()[i] - b.data()[i]) < 1e-10);
  }
  const ZeroFieldSequence z(g, 5);
  CHECK(z.shifted(3, 0.5).is_zero());
  CHECK_THROWS_AS(z.at(6), ArgumentError);
  CHECK_THROWS_AS(ds.at(0), ArgumentError);
  CHECK_THROWS_AS(BSplineFieldSequence(layout, {std::vector<double>(3)}), DimensionError);
}

TEST_CASE("zero-motion single coverage reassembles the static k-space") {
  const auto spec = PhantomSpec::thorax(kGrid);
  const auto sched = tiling_schedule(kGrid, 5, 1);
  const auto acq = acquire(spec, still(), sched);
  const auto r = accumulate(acq, ZeroFieldSequence(kGrid, 5), ReconOptions{}, "static");
  const auto full = fft3_forward(to_complex(reference_image(spec)));
  double err = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (r.weights.counts[i] == 0.0) {
      CHECK(r.kspace[i] == Complex{});
      continue;
    }
    CHECK(r.weights.counts[i] == 1.0);
    err = std::max(err, std::abs(r.kspace[i] - full[i]));
    norm = std::max(norm, std::abs(full[i]));
  }
  CHECK(err <= 1e-5 * norm);
  CHECK(r.log.direct_copies == 5);
  CHECK(r.log.warps == 0);

  // Static equivalence: mask-and-sum of the raw partial k-spaces.
  ComplexVolume sum(kGrid);
  for (int t = 1; t <= 5; ++t) {
    const auto p = acq.partial_kspace(t);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p[i];
  }
  CHECK(max_rel_diff(r.kspace, sum) <= 1e-6);
}

TEST_CASE("double coverage is normalized away") {
  const auto spec = PhantomSpec::thorax(kGrid);
  const auto once = acquire(spec, still(), tiling_schedule(kGrid, 4, 1));
  const auto twice = acquire(spec, still(), tiling_schedule(kGrid, 4, 2));
  const auto a = accumulate(once, ZeroFieldSequence(kGrid, 4), ReconOptions{});
  const auto b = accumulate(twice, ZeroFieldSequence(kGrid, 4), ReconOptions{});
  CHECK(max_rel_diff(b.kspace, a.kspace) <= 1e-6);
  for (std::size_t i = 0; i < kGrid.size(); ++i) CHECK(b.weights.counts[i] == 2.0 * a.weights.counts[i]);

  // Same with motion and nonzero fields.
  const auto m = breathing();
  const auto mo = acquire(spec, m, tiling_schedule(kGrid, 4, 1), frozen());
  const auto mt = acquire(spec, m, tiling_schedule(kGrid, 4, 2), frozen());
  std::vector<DisplacementField> fields;
  for (int t = 1; t <= 4; ++t) fields.push_back(correction_field(m, t - 1.0, kGrid));
  const DenseFieldSequence seq(fields);
  const auto c = accumulate(mo, seq, ReconOptions{});
  const auto d = accumulate(mt, seq, ReconOptions{});
  CHECK(max_rel_diff(d.kspace, c.kspace) <= 1e-6);
  CHECK(c.log.warps == 3);
}

TEST_CASE("accumulation is independent of processing order") {
  const auto spec = PhantomSpec::thorax(kGrid);
  const auto m = breathing();
  const auto acq = acquire(spec, m, build_schedule(AcquisitionMode::Standard, 12, 2.5, kGrid, 5));
  std::vector<DisplacementField> fields;
  for (int t = 1; t <= 12; ++t) fields.push_back(correction_field(m, t - 1.0, kGrid));
  const DenseFieldSequence seq(fields);

  ReconOptions base;
  base.shift_correction = true;
  const auto ref = accumulate(acq, seq, base);

  ReconOptions shuffled = base;
  shuffled.order = std::vector<int>{7, 3, 12, 1, 9, 2, 11, 5, 4, 10, 6, 8};
  const auto det = accumulate(acq, seq, shuffled);
  CHECK(det.kspace.data() == ref.kspace.data());
  CHECK(det.weights.counts == ref.weights.counts);

  shuffled.deterministic_reduction = false;
  const auto loose = accumulate(acq, seq, shuffled);
  CHECK(max_rel_diff(loose.kspace, ref.kspace) <= 1e-9);
}

TEST_CASE("weight identity") {
  const auto acq = acquire(PhantomSpec::thorax(kGrid), breathing(), build_schedule(AcquisitionMode::Standard, 10, 2.5, kGrid, 1));
  const auto r = accumulate(acq, ZeroFieldSequence(kGrid, 10), ReconOptions{});
  const auto W = r.weights.normalizer_volume();
  std::size_t empty = 0;
  for (std::size_t i = 0; i < kGrid.size(); ++i) {
    if (r.weights.counts[i] > 0.0) {
      CHECK(std::abs(W[i] * r.weights.counts[i] - 1.0) <= 1e-12);
    } else {
      ++empty;
      CHECK(W[i] == 1.0);
      CHECK(r.kspace[i] == Complex{});
    }
  }
  CHECK(empty > 0);
}

TEST_CASE("ground-truth fields improve on static accumulation") {
  const auto spec = PhantomSpec::thorax(kGrid);
  const auto m = breathing();
  const auto acq = acquire(spec, m, build_schedule(AcquisitionMode::Standard, 30, 2.5, kGrid, 2));
  const auto ref = reference_image(spec);
  const auto stat = reconstruct_image(accumulate(acq, ZeroFieldSequence(kGrid, 30), ReconOptions{}).kspace);
  const auto gt = reconstruct_image(accumulate_entries(acq, ground_truth_patch_fields(acq, m), ReconOptions{}).kspace);
  CHECK(rmse_of(gt, ref) < rmse_of(stat, ref));
}

TEST_CASE("shift correction helps under monotone drift") {
  // Compact body so the drifting anatomy stays inside the field of view.
  const GridSpec g = GridSpec::from_fov({32, 32, 22}, {400, 400, 275});
  auto spec = PhantomSpec::thorax(g);
  for (auto& b : spec.bodies) {
    for (int d = 0; d < 3; ++d) {
      b.center[d] *= 0.6;
      b.semi_axes[d] *= 0.6;
    }
    if (b.clip) b.clip->threshold *= 0.6;
  }
  const auto ref = reference_image(spec);
  MotionSpec m = still();
  m.drift_vox_per_tp = {0.4, 0.0, 0.2};
  const int T = 16;
  std::vector<DisplacementField> fields;
  for (int t = 1; t <= T; ++t) fields.push_back(correction_field(m, t - 1.0, g));
  const DenseFieldSequence seq(fields);
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto acq = acquire(spec, m, build_schedule(AcquisitionMode::Standard, T, 2.5, g, seed));
    ReconOptions plain, shifted;
    shifted.shift_correction = true;
    const double e0 = rmse_of(reconstruct_image(accumulate(acq, seq, plain).kspace), ref);
    const double e1 = rmse_of(reconstruct_image(accumulate(acq, seq, shifted).kspace), ref);
    CAPTURE(seed, e0, e1);
    CHECK(e1 < e0);
    wins += e1 < e0;
  }
  CHECK(wins == 10);
}

TEST_CASE("image reconstruction") {
  const auto ref = reference_image(PhantomSpec::thorax(kGrid));
  const auto k = fft3_forward(to_complex(ref));
  const auto img = reconstruct_image(k);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(img[i] - ref[i]) < 1e-6);
  CHECK(reconstruct_image(ComplexVolume(kGrid)).data() == RealVolume(kGrid).data());
  ComplexVolume scaled = k;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 3.0;
  const auto s = reconstruct_image(scaled);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(s[i] - 3.0 * img[i]) < 1e-9);
  scaled[3] = Complex(std::nan(""), 0.0);
  CHECK_THROWS_AS(reconstruct_image(scaled), DataError);
}

TEST_CASE("accumulation argument errors") {
  const auto acq = acquire(PhantomSpec::thorax(kGrid), still(), build_schedule(AcquisitionMode::Standard, 4, 2.5, kGrid, 1));
  CHECK_THROWS_AS(accumulate(acq, ZeroFieldSequence(kGrid, 3), ReconOptions{}), ArgumentError);
  CHECK_THROWS_AS(accumulate(acq, ZeroFieldSequence(GridSpec({8, 8, 8}, {1, 1, 1}), 4), ReconOptions{}), DimensionError);
  ReconOptions o;
  o.reference = 5;
  CHECK_THROWS_AS(accumulate(acq, ZeroFieldSequence(kGrid, 4), o), ArgumentError);
  o = ReconOptions{};
  o.delta = -0.5;
  CHECK_THROWS_AS(accumulate(acq, ZeroFieldSequence(kGrid, 4), o), ArgumentError);
  o = ReconOptions{};
  o.order = std::vector<int>{1, 2, 2, 4};
  CHECK_THROWS_AS(accumulate(acq, ZeroFieldSequence(kGrid, 4), o), ArgumentError);
  auto bad = [](int) { return EntryFields{{std::nullopt}, {0, 3}}; };
  CHECK_THROWS_AS(accumulate_entries(acq, bad, ReconOptions{}), ArgumentError);
}
