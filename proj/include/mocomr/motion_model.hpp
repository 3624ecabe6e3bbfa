#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mocomr/binary.hpp"
#include "mocomr/bspline.hpp"
#include "mocomr/grid.hpp"
#include "mocomr/phantom.hpp"
#include "mocomr/sampling.hpp"

namespace mocomr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Real/imaginary vectorization of the readout lines of `patch`: all real
/// parts (points in raster order, x fastest), then all imaginary parts.
/// Voxels outside the patch lines must be zero.
inline VectorXd vectorize_center(const ComplexVolume& tiny_center, const Patch& patch) {
  const GridSpec& g = tiny_center.grid();
  std::vector<std::uint8_t> on(g.size(), 0);
  for (const auto& p : patch.points)
    for (int x = 0; x < g.nx(); ++x) on[kspace_index(g, x, p)] = 1;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!on[i] && tiny_center[i] != Complex{})
      throw ArgumentError("vectorize_center: nonzero data outside the tiny-center support");
  const std::size_t half = patch.points.size() * g.nx();
  VectorXd v(2 * half);
  std::size_t k = 0;
  for (const auto& p : patch.points)
    for (int x = 0; x < g.nx(); ++x, ++k) {
      const Complex c = tiny_center[kspace_index(g, x, p)];
      v[k] = c.real();
      v[half + k] = c.imag();
    }
  return v;
}

/// Same vectorization taken directly from acquired samples of a larger
/// center patch `source` that contains every point of `tiny`.
inline VectorXd vectorize_subpatch(const Patch& source, const PatchSamples& samples, const Patch& tiny, int nx) {
  const std::size_t half = tiny.points.size() * static_cast<std::size_t>(nx);
  VectorXd v(2 * half);
  std::size_t k = 0;
  for (const auto& p : tiny.points) {
    std::size_t row = source.points.size();
    for (std::size_t i = 0; i < source.points.size(); ++i)
      if (source.points[i] == p) {
        row = i;
        break;
      }
    if (row == source.points.size()) throw ArgumentError("vectorize: tiny-center point missing from source patch");
    for (int x = 0; x < nx; ++x, ++k) {
      const Complex c = samples.lines[row * nx + x];
      v[k] = c.real();
      v[half + k] = c.imag();
    }
  }
  return v;
}

struct PcaBasis {
  VectorXd mean;
  MatrixXd components;         // d_in x d_pca, orthonormal columns
  VectorXd explained_variance; // d_pca, non-increasing
  double total_variance = 0.0;

  int d_in() const noexcept { return static_cast<int>(mean.size()); }
  int d_pca() const noexcept { return static_cast<int>(components.cols()); }
};

/// PCA of the rows of `inputs` (one sample per row) through a thin SVD of the
/// centered data matrix. Component signs make the largest-magnitude entry
/// positive.
inline PcaBasis fit_pca(const MatrixXd& inputs, int d_pca) {
  const auto n = inputs.rows();
  const auto d = inputs.cols();
  if (n < 2) throw ArgumentError("fit_pca: need at least 2 samples");
  if (d_pca < 1 || d_pca > std::min<Eigen::Index>(n - 1, d))
    throw ArgumentError("fit_pca: d_pca must be in [1, min(n-1, d_in)] = [1, " +
                        std::to_string(std::min<Eigen::Index>(n - 1, d)) + "]");
  if (!inputs.allFinite()) throw DataError("fit_pca: non-finite inputs");

  PcaBasis b;
  b.mean = inputs.colwise().mean().transpose();
  const MatrixXd centered = inputs.rowwise() - b.mean.transpose();
  b.total_variance = centered.squaredNorm() / static_cast<double>(n - 1);
  if (b.total_variance == 0.0) throw DataError("fit_pca: zero-variance data");

  Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  b.components = svd.matrixV().leftCols(d_pca);
  b.explained_variance = svd.singularValues().head(d_pca).array().square() / static_cast<double>(n - 1);
  for (int c = 0; c < d_pca; ++c) {
    Eigen::Index arg = 0;
    b.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (b.components(arg, c) < 0.0) b.components.col(c) *= -1.0;
  }
  return b;
}

inline PcaBasis fit_pca(std::span<const VectorXd> inputs, int d_pca) {
  if (inputs.empty()) throw ArgumentError("fit_pca: no inputs");
  MatrixXd X(static_cast<Eigen::Index>(inputs.size()), inputs.front().size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != X.cols()) throw ArgumentError("fit_pca: inconsistent input lengths");
    X.row(static_cast<Eigen::Index>(i)) = inputs[i].transpose();
  }
  return fit_pca(X, d_pca);
}

inline VectorXd project_scores(const PcaBasis& b, const VectorXd& x) {
  if (x.size() != b.mean.size())
    throw ArgumentError("project_scores: input length " + std::to_string(x.size()) + " != d_in " +
                        std::to_string(b.mean.size()));
  return b.components.transpose() * (x - b.mean);
}

/// z = (s, s^2, s^3).
inline VectorXd cubic_features(const VectorXd& s) {
  const auto p = s.size();
  VectorXd z(3 * p);
  z.head(p) = s;
  z.segment(p, p) = s.array().square();
  z.tail(p) = s.array().cube();
  return z;
}

/// Psi = argmin sum_t |y_t - Psi z_t|^2 + lambda |Psi|_F^2 for rows z_t of
/// `features` and y_t of `outputs`, via the SVD of the feature matrix. With
/// lambda = 0 this is the minimum-norm least-squares solution.
inline MatrixXd fit_model(const MatrixXd& features, const MatrixXd& outputs, double lambda) {
  if (features.rows() != outputs.rows() || features.rows() < 1)
    throw ArgumentError("fit_model: feature and output counts must match and be >= 1");
  if (!(lambda >= 0.0)) throw ArgumentError("fit_model: lambda must be >= 0");
  if (!features.allFinite() || !outputs.allFinite()) throw DataError("fit_model: non-finite inputs");

  Eigen::JacobiSVD<MatrixXd> svd(features, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double tol = sv.size() ? sv[0] * std::numeric_limits<double>::epsilon() *
                                     static_cast<double>(std::max(features.rows(), features.cols()))
                               : 0.0;
  VectorXd gain(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (lambda > 0.0)
      gain[i] = sv[i] / (sv[i] * sv[i] + lambda);
    else
      gain[i] = sv[i] > tol ? 1.0 / sv[i] : 0.0;
  }
  const MatrixXd psi_t = svd.matrixV() * gain.asDiagonal() * (svd.matrixU().transpose() * outputs);
  return psi_t.transpose();
}

/// Cubic-regression motion model: tiny k-space center -> PCA scores ->
/// cubic features -> B-spline coefficients of the displacement field.
struct MotionModel {
  PcaBasis basis;
  MatrixXd weights;            // d_out x 3 d_pca
  double ridge = 0.0;          // effective lambda used in fit_model
  double ridge_relative = 0.0; // lambda / (trace(Z^T Z) / (3 d_pca))
  BSplineLayout layout;
  int tiny_radius = 2;
  int training_size = 0;
  std::uint64_t seed = 0;

  int d_in() const noexcept { return basis.d_in(); }
  int d_pca() const noexcept { return basis.d_pca(); }
  int d_out() const noexcept { return static_cast<int>(weights.rows()); }
  Patch tiny_patch() const { return Patch::make(PatchKind::TinyCenter, {0, 0}, tiny_radius, layout.grid); }
};

inline MotionModel train_motion_model(std::span<const VectorXd> inputs, std::span<const VectorXd> outputs,
                                      const BSplineLayout& layout, int d_pca, double ridge_relative,
                                      int tiny_radius) {
  if (inputs.size() != outputs.size() || inputs.empty())
    throw ArgumentError("train_motion_model: need equally many inputs and outputs");
  if (!(ridge_relative >= 0.0)) throw ArgumentError("train_motion_model: ridge must be >= 0");
  MotionModel m;
  m.layout = layout;
  m.tiny_radius = tiny_radius;
  m.training_size = static_cast<int>(inputs.size());
  m.ridge_relative = ridge_relative;
  m.basis = fit_pca(inputs, d_pca);
  const auto n = static_cast<Eigen::Index>(inputs.size());
  MatrixXd Z(n, 3 * d_pca), Y(n, static_cast<Eigen::Index>(layout.coefficient_count()));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (outputs[i].size() != Y.cols()) throw ArgumentError("train_motion_model: output length != B-spline coefficients");
    Z.row(i) = cubic_features(project_scores(m.basis, inputs[i])).transpose();
    Y.row(i) = outputs[i].transpose();
  }
  m.ridge = ridge_relative * Z.squaredNorm() / static_cast<double>(Z.cols());
  m.weights = fit_model(Z, Y, m.ridge);
  return m;
}

inline VectorXd predict_coefficients(const MotionModel& m, const VectorXd& x) {
  return m.weights * cubic_features(project_scores(m.basis, x));
}

inline DisplacementField predict_motion(const MotionModel& m, const ComplexVolume& tiny_center) {
  require_same_grid(tiny_center.grid(), m.layout.grid, "predict_motion");
  const VectorXd x = vectorize_center(tiny_center, m.tiny_patch());
  const VectorXd y = predict_coefficients(m, x);
  return bspline_to_dense(BSplineField(m.layout, std::vector<double>(y.data(), y.data() + y.size())));
}

namespace io {

inline constexpr char kModelMagic[] = "MOCOMRMM";

/// Binary model: magic, version, dims header, then mean, components
/// (column-major), explained variance and weights (row-major), all as
/// little-endian float64.
inline Bytes encode_model(const MotionModel& m) {
  Bytes b;
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(kModelMagic[i]));
  put_u32(b, 1);
  put_u64(b, static_cast<std::uint64_t>(m.d_in()));
  put_u64(b, static_cast<std::uint64_t>(m.d_pca()));
  put_u64(b, static_cast<std::uint64_t>(m.d_out()));
  for (Eigen::Index i = 0; i < m.basis.mean.size(); ++i) put_f64(b, m.basis.mean[i]);
  for (Eigen::Index c = 0; c < m.basis.components.cols(); ++c)
    for (Eigen::Index r = 0; r < m.basis.components.rows(); ++r) put_f64(b, m.basis.components(r, c));
  for (Eigen::Index i = 0; i < m.basis.explained_variance.size(); ++i) put_f64(b, m.basis.explained_variance[i]);
  put_f64(b, m.basis.total_variance);
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) put_f64(b, m.weights(r, c));
  return b;
}

inline nlohmann::json model_sidecar(const MotionModel& m, const std::string& checksum) {
  const auto& l = m.layout;
  return {{"format", "mocomr-motion-model"},
          {"version", 1},
          {"d_in", m.d_in()},
          {"d_pca", m.d_pca()},
          {"d_out", m.d_out()},
          {"lambda", m.ridge},
          {"lambda_relative", m.ridge_relative},
          {"seed", m.seed},
          {"training_size", m.training_size},
          {"tiny_radius", m.tiny_radius},
          {"grid", {{"dims", l.grid.dims()}, {"spacing_mm", l.grid.spacing()}}},
          {"control_spacing_vox", l.spacing_vox},
          {"control_dims", l.control_dims},
          {"sha256", checksum}};
}

inline void save_model(const MotionModel& m, const std::filesystem::path& path) {
  const Bytes b = encode_model(m);
  const std::string sum = sha256_hex(b);
  write_file(path, b);
  write_file(std::filesystem::path(path.string() + ".json"), model_sidecar(m, sum).dump(2) + "\n");
}

inline MotionModel load_model(const std::filesystem::path& path) {
  const auto side = nlohmann::json::parse(read_text(path.string() + ".json"));
  const Bytes b = read_file(path);
  if (sha256_hex(b) != side.at("sha256").get<std::string>()) throw DataError("model checksum mismatch: " + path.string());
  Reader r(b);
  if (r.tag(8) != std::string(kModelMagic, 8)) throw DataError("not a motion model file: " + path.string());
  if (r.u32() != 1) throw DataError("unsupported motion model version");
  const auto d_in = static_cast<Eigen::Index>(r.u64());
  const auto d_pca = static_cast<Eigen::Index>(r.u64());
  const auto d_out = static_cast<Eigen::Index>(r.u64());
  if (d_in != side.at("d_in").get<Eigen::Index>() || d_pca != side.at("d_pca").get<Eigen::Index>() ||
      d_out != side.at("d_out").get<Eigen::Index>())
    throw DataError("motion model header disagrees with sidecar");
  MotionModel m;
  m.basis.mean.resize(d_in);
  for (Eigen::Index i = 0; i < d_in; ++i) m.basis.mean[i] = r.f64();
  m.basis.components.resize(d_in, d_pca);
  for (Eigen::Index c = 0; c < d_pca; ++c)
    for (Eigen::Index i = 0; i < d_in; ++i) m.basis.components(i, c) = r.f64();
  m.basis.explained_variance.resize(d_pca);
  for (Eigen::Index i = 0; i < d_pca; ++i) m.basis.explained_variance[i] = r.f64();
  m.basis.total_variance = r.f64();
  m.weights.resize(d_out, 3 * d_pca);
  for (Eigen::Index i = 0; i < d_out; ++i)
    for (Eigen::Index c = 0; c < 3 * d_pca; ++c) m.weights(i, c) = r.f64();
  if (!r.done()) throw DataError("motion model payload has trailing bytes");
  m.ridge = side.at("lambda").get<double>();
  m.ridge_relative = side.at("lambda_relative").get<double>();
  m.seed = side.at("seed").get<std::uint64_t>();
  m.training_size = side.at("training_size").get<int>();
  m.tiny_radius = side.at("tiny_radius").get<int>();
  const GridSpec g(side.at("grid").at("dims").get<Index3>(), side.at("grid").at("spacing_mm").get<Vec3>());
  m.layout = BSplineLayout::make(g, side.at("control_spacing_vox").get<int>());
  if (static_cast<Eigen::Index>(m.layout.coefficient_count()) != d_out)
    throw DataError("motion model output size does not match its control lattice");
  return m;
}

}  // namespace io

}  // namespace mocomr
