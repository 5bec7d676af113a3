#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "dccnn/errors.hpp"
#include "dccnn/kspace.hpp"
#include "dccnn/protocol.hpp"

namespace dccnn {

/// Symmetric 3x3 tensor stored as its six unique components.
struct Sym3 {
  double xx = 0, yy = 0, zz = 0, xy = 0, xz = 0, yz = 0;

  double trace() const { return xx + yy + zz; }
  double operator()(int r, int c) const {
    if (r > c) std::swap(r, c);
    if (r == c) return r == 0 ? xx : (r == 1 ? yy : zz);
    if (r == 0) return c == 1 ? xy : xz;
    return yz;
  }
  /// g^T D g
  double quadratic(const Vec3& g) const {
    return xx * g[0] * g[0] + yy * g[1] * g[1] + zz * g[2] * g[2] +
           2.0 * (xy * g[0] * g[1] + xz * g[0] * g[2] + yz * g[1] * g[2]);
  }
  std::array<double, 6> components() const { return {xx, yy, zz, xy, xz, yz}; }

  /// sum_k l_k e_k e_k^T
  static Sym3 from_eigen(const std::array<double, 3>& values, const std::array<Vec3, 3>& vectors) {
    Sym3 d;
    for (int k = 0; k < 3; ++k) {
      const auto& e = vectors[k];
      const double l = values[k];
      d.xx += l * e[0] * e[0];
      d.yy += l * e[1] * e[1];
      d.zz += l * e[2] * e[2];
      d.xy += l * e[0] * e[1];
      d.xz += l * e[0] * e[2];
      d.yz += l * e[1] * e[2];
    }
    return d;
  }
  bool operator==(const Sym3&) const = default;
};

struct EigenSystem {
  std::array<double, 3> values{};   // descending
  std::array<Vec3, 3> vectors{};    // orthonormal, vectors[k] pairs with values[k]
};

/// Symmetric 3x3 eigen-decomposition, eigenvalues sorted descending.
inline EigenSystem eig_sym3(const Sym3& d) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = d(r, c);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(m);
  EigenSystem es;
  for (int k = 0; k < 3; ++k) {
    const int src = 2 - k;  // Eigen sorts ascending
    es.values[k] = solver.eigenvalues()(src);
    for (int i = 0; i < 3; ++i) es.vectors[k][i] = solver.eigenvectors()(i, src);
  }
  return es;
}

inline double md(double l1, double l2, double l3) { return (l1 + l2 + l3) / 3.0; }

/// Fractional anisotropy, clamped to [0, 1]; 0 for the all-zero tensor.
inline double fa(double l1, double l2, double l3) {
  const double denom = l1 * l1 + l2 * l2 + l3 * l3;
  if (denom == 0.0) return 0.0;
  const double m = md(l1, l2, l3);
  const double disp = (l1 - m) * (l1 - m) + (l2 - m) * (l2 - m) + (l3 - m) * (l3 - m);
  return std::clamp(std::sqrt(1.5) * std::sqrt(disp) / std::sqrt(denom), 0.0, 1.0);
}

/// Local short-axis frame at pixel (px, py) around the LV centre: radial,
/// circumferential (radial rotated 90 degrees counter-clockwise in-plane) and
/// longitudinal (slice normal).
struct LocalFrame {
  Vec3 radial, circumferential, longitudinal;
};

inline LocalFrame local_frame(double px, double py, double cx, double cy) {
  const double dx = px - cx, dy = py - cy;
  const double r = std::hypot(dx, dy);
  if (r == 0.0) throw std::invalid_argument("local_frame: pixel coincides with the LV centre");
  const Vec3 radial{dx / r, dy / r, 0.0};
  return {radial, {-radial[1], radial[0], 0.0}, {0.0, 0.0, 1.0}};
}

/// Helix angle in degrees, within [-90, 90]. The eigenvector sign is fixed so
/// that its circumferential component is >= 0; on the tie (purely
/// longitudinal) the angle is +90.
inline double helix_angle(const Vec3& e1, double px, double py, double cx, double cy) {
  const auto frame = local_frame(px, py, cx, cy);
  double c = dot(e1, frame.circumferential);
  double l = dot(e1, frame.longitudinal);
  if (c < 0.0 || (c == 0.0 && l < 0.0)) {
    c = -c;
    l = -l;
  }
  return std::atan2(l, c) * 180.0 / std::numbers::pi;
}

enum class FitStatus : std::uint8_t {
  kInvalid = 0,        // not fitted: outside mask or nonpositive signal
  kValid = 1,
  kNonPositive = 2,    // fitted, but at least one eigenvalue <= 0
};

struct DiffusionTensorField {
  std::size_t nx = 0, ny = 0;
  std::vector<Sym3> tensors;
  std::vector<double> s0;
  std::vector<FitStatus> status;

  DiffusionTensorField() = default;
  DiffusionTensorField(std::size_t nx_, std::size_t ny_)
      : nx(nx_), ny(ny_), tensors(nx_ * ny_), s0(nx_ * ny_, 0.0), status(nx_ * ny_, FitStatus::kInvalid) {}

  bool fitted(std::size_t i) const { return status[i] != FitStatus::kInvalid; }
};

/// Magnitude of the complex mean over averages for each protocol entry.
/// Images are ordered entry-major: index = entry * averages + average.
inline std::vector<std::vector<double>> average_signals(std::span<const ComplexImage> images,
                                                        const DiffusionProtocol& protocol) {
  if (images.size() != protocol.images()) {
    throw DataError("average_signals: " + std::to_string(images.size()) + " images for a protocol of " +
                    std::to_string(protocol.images()));
  }
  const std::size_t np = images.front().pixels();
  std::vector<std::vector<double>> out(protocol.entries.size(), std::vector<double>(np));
  for (std::size_t e = 0; e < protocol.entries.size(); ++e) {
    for (std::size_t i = 0; i < np; ++i) {
      double re = 0.0, im = 0.0;
      for (std::size_t a = 0; a < protocol.averages; ++a) {
        const auto& img = images[e * protocol.averages + a];
        re += img.data[i];
        im += img.data[np + i];
      }
      const double n = static_cast<double>(protocol.averages);
      out[e][i] = std::hypot(re / n, im / n);
    }
  }
  return out;
}

/// Log-linear least-squares tensor fit per pixel. `mask` (optional, one byte
/// per pixel) restricts the pixels to fit. Pixels with any nonpositive
/// averaged signal are left invalid; tensors with a nonpositive eigenvalue
/// are kept but flagged kNonPositive.
inline DiffusionTensorField fit_tensor(std::span<const ComplexImage> images, const DiffusionProtocol& protocol,
                                       std::span<const std::uint8_t> mask = {}) {
  protocol.validate();
  if (images.empty()) throw DataError("fit_tensor: no images");
  const std::size_t nx = images.front().nx, ny = images.front().ny;
  for (const auto& img : images)
    if (img.nx != nx || img.ny != ny) throw DataError("fit_tensor: images differ in size");
  if (!mask.empty() && mask.size() != nx * ny) throw DataError("fit_tensor: mask size mismatch");

  const auto signals = average_signals(images, protocol);
  const Eigen::MatrixXd a = protocol.design_matrix();
  const auto m = a.rows();
  // Least-squares solution operator (7 x m), shared by every pixel.
  const Eigen::MatrixXd solve = a.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(m, m));

  DiffusionTensorField field(nx, ny);
  Eigen::VectorXd logs(m);
  for (std::size_t i = 0; i < nx * ny; ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    bool positive = true;
    for (Eigen::Index k = 0; k < m; ++k) {
      const double s = signals[static_cast<std::size_t>(k)][i];
      if (!(s > 0.0)) {
        positive = false;
        break;
      }
      logs(k) = std::log(s);
    }
    if (!positive) continue;
    const Eigen::VectorXd beta = solve * logs;
    Sym3 d{beta(1), beta(2), beta(3), beta(4), beta(5), beta(6)};
    field.tensors[i] = d;
    field.s0[i] = std::exp(beta(0));
    const auto es = eig_sym3(d);
    field.status[i] = es.values[2] > 0.0 ? FitStatus::kValid : FitStatus::kNonPositive;
  }
  return field;
}

/// Maps derived from a tensor field. Unfitted pixels hold 0.
struct TensorMetrics {
  std::size_t nx = 0, ny = 0;
  std::vector<double> fa, md, ha;
  std::array<std::vector<double>, 3> eigenvalues;
};

/// FA, MD, eigenvalues and helix angle (relative to the LV centre (cx, cy),
/// pixel coordinates x = column, y = row).
inline TensorMetrics compute_metrics(const DiffusionTensorField& field, double cx, double cy) {
  TensorMetrics t;
  t.nx = field.nx;
  t.ny = field.ny;
  const std::size_t np = field.nx * field.ny;
  t.fa.assign(np, 0.0);
  t.md.assign(np, 0.0);
  t.ha.assign(np, 0.0);
  for (auto& e : t.eigenvalues) e.assign(np, 0.0);
  for (std::size_t i = 0; i < np; ++i) {
    if (!field.fitted(i)) continue;
    const auto es = eig_sym3(field.tensors[i]);
    t.fa[i] = fa(es.values[0], es.values[1], es.values[2]);
    t.md[i] = md(es.values[0], es.values[1], es.values[2]);
    for (int k = 0; k < 3; ++k) t.eigenvalues[k][i] = es.values[k];
    const double px = static_cast<double>(i % field.nx);
    const double py = static_cast<double>(i / field.nx);
    if (px != cx || py != cy) t.ha[i] = helix_angle(es.vectors[0], px, py, cx, cy);
  }
  return t;
}

}  // namespace dccnn
