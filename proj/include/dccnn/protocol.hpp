#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dccnn {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// One diffusion weighting: b-value (s/mm^2) and unit gradient direction.
struct GradientEntry {
  double b = 0.0;
  Vec3 g{1.0, 0.0, 0.0};
  bool operator==(const GradientEntry&) const = default;
};

/// Evenly spread unit directions on a hemisphere: antipodally symmetric
/// electrostatic repulsion started from a Fibonacci lattice, fixed iteration
/// count, so the result is deterministic.
inline std::vector<Vec3> electrostatic_directions(std::size_t n, std::size_t iterations = 4000) {
  std::vector<Vec3> d(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * static_cast<double>(i);
    d[i] = {r * std::cos(phi), r * std::sin(phi), z};
  }
  std::vector<Vec3> force(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto& f : force) f = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        for (double sign : {1.0, -1.0}) {
          const Vec3 diff{d[i][0] - sign * d[j][0], d[i][1] - sign * d[j][1], d[i][2] - sign * d[j][2]};
          const double r = norm(diff);
          const double inv3 = 1.0 / (r * r * r);
          for (int k = 0; k < 3; ++k) force[i][k] += diff[k] * inv3;
        }
      }
    }
    const double step = 0.01 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 moved{d[i][0] + step * force[i][0], d[i][1] + step * force[i][1], d[i][2] + step * force[i][2]};
      d[i] = normalized(moved);
    }
  }
  for (auto& v : d) {
    if (v[2] < 0.0) v = {-v[0], -v[1], -v[2]};
  }
  return d;
}

/// Acquisition scheme shared by every image of a DWI stack.
struct DiffusionProtocol {
  std::vector<GradientEntry> entries;
  std::size_t averages = 1;

  /// b = 0 plus b = 1000 s/mm^2 along 12 spread directions, 4 averages.
  static DiffusionProtocol standard(double b = 1000.0, std::size_t directions = 12, std::size_t averages = 4) {
    DiffusionProtocol p;
    p.averages = averages;
    p.entries.push_back({0.0, {0.0, 0.0, 1.0}});
    for (const auto& g : electrostatic_directions(directions)) p.entries.push_back({b, g});
    return p;
  }

  std::size_t images() const { return entries.size() * averages; }

  /// Rows [1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz] of the
  /// log-linear model ln S = ln S0 - b g^T D g, unknowns
  /// (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
  Eigen::MatrixXd design_matrix() const {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(entries.size()), 7);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const auto& g = e.g;
      const auto r = static_cast<Eigen::Index>(i);
      a(r, 0) = 1.0;
      a(r, 1) = -e.b * g[0] * g[0];
      a(r, 2) = -e.b * g[1] * g[1];
      a(r, 3) = -e.b * g[2] * g[2];
      a(r, 4) = -2.0 * e.b * g[0] * g[1];
      a(r, 5) = -2.0 * e.b * g[0] * g[2];
      a(r, 6) = -2.0 * e.b * g[1] * g[2];
    }
    return a;
  }

  /// Throws when directions are not unit vectors, no b~0 entry exists, fewer
  /// than six weighted directions are present, or the design matrix is rank
  /// deficient (e.g. collinear directions).
  void validate(double b0_threshold = 50.0) const {
    if (averages == 0) throw std::invalid_argument("protocol: averages must be >= 1");
    std::size_t b0 = 0, weighted = 0;
    for (const auto& e : entries) {
      if (!(e.b >= 0.0) || !std::isfinite(e.b)) throw std::invalid_argument("protocol: invalid b-value");
      if (e.b <= b0_threshold) {
        ++b0;
        continue;
      }
      if (std::abs(norm(e.g) - 1.0) > 1e-9) {
        throw std::invalid_argument("protocol: gradient directions must be unit vectors");
      }
      ++weighted;
    }
    if (b0 == 0) throw std::invalid_argument("protocol: needs at least one b~0 measurement");
    if (weighted < 6) throw std::invalid_argument("protocol: needs at least six diffusion-weighted directions");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_matrix());
    if (qr.rank() < 7) {
      throw std::invalid_argument("protocol: design matrix is rank deficient (collinear directions?)");
    }
  }

  bool operator==(const DiffusionProtocol&) const = default;
};

}  // namespace dccnn
