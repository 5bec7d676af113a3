#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"

namespace dccnn {

/// PSNR reported for identical images.
inline constexpr double kPsnrCap = 140.0;

/// 10 log10(peak^2 / MSE) with peak = max(gt); capped at kPsnrCap.
inline double psnr(std::span<const double> recon, std::span<const double> gt) {
  if (recon.size() != gt.size() || gt.empty()) throw ShapeError("psnr: images differ in size");
  double peak = 0.0, se = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    peak = std::max(peak, gt[i]);
    se += (recon[i] - gt[i]) * (recon[i] - gt[i]);
  }
  const double mse = se / static_cast<double>(gt.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {
template <class Diff>
double masked_rms(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> mask,
                  Diff diff, const char* what) {
  if (a.size() != b.size() || a.size() != mask.size()) throw ShapeError(std::string(what) + ": size mismatch");
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask[i]) continue;
    const double d = diff(a[i], b[i]);
    se += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument(std::string(what) + ": empty mask");
  return std::sqrt(se / static_cast<double>(n));
}
}  // namespace detail

inline double rmse_masked(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> mask) {
  return detail::masked_rms(a, b, mask, [](double x, double y) { return x - y; }, "rmse_masked");
}

/// Difference of two axial angles (degrees) wrapped into [-90, 90).
inline double wrap_axial(double d) {
  double w = std::fmod(d + 90.0, 180.0);
  if (w < 0.0) w += 180.0;
  return w - 90.0;
}

/// RMSE of helix angles with each difference wrapped modulo 180 degrees.
inline double ha_rmse(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> mask) {
  return detail::masked_rms(a, b, mask, [](double x, double y) { return wrap_axial(x - y); }, "ha_rmse");
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and sample standard deviation (0 for a single value).
inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return r;
}

struct SubjectMetrics {
  std::string name;
  double psnr = 0.0;
  std::optional<double> fa_rmse;
  std::optional<double> md_rmse;  // 1e-3 mm^2/s
  std::optional<double> ha_rmse;  // degrees
};

/// Per-subject rows and their [mean (std)] aggregates.
struct EvalReport {
  std::string model_label;
  std::string uf_label;
  std::vector<SubjectMetrics> subjects;

  MeanStd aggregate(std::optional<double> SubjectMetrics::*field) const {
    std::vector<double> v;
    for (const auto& s : subjects)
      if ((s.*field).has_value()) v.push_back(*(s.*field));
    return mean_std(v);
  }
  MeanStd aggregate_psnr() const {
    std::vector<double> v;
    for (const auto& s : subjects) v.push_back(s.psnr);
    return mean_std(v);
  }
  bool has_tensor_metrics() const {
    return !subjects.empty() && subjects.front().fa_rmse.has_value();
  }

  /// Aligned text table: one row per metric, "mean (std)" in the value column.
  std::string table() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-6s %-10s %-24s\n", "UF", "Metric", model_label.c_str());
    out += line;
    const auto row = [&](const char* name, MeanStd ms, int digits) {
      char value[64];
      std::snprintf(value, sizeof(value), "%.*f (%.*f)", digits, ms.mean, digits, ms.std);
      std::snprintf(line, sizeof(line), "%-6s %-10s %-24s\n", uf_label.c_str(), name, value);
      out += line;
    };
    row("PSNR", aggregate_psnr(), 3);
    if (has_tensor_metrics()) {
      row("FA RMSE", aggregate(&SubjectMetrics::fa_rmse), 3);
      row("MD RMSE", aggregate(&SubjectMetrics::md_rmse), 3);
      row("HA RMSE", aggregate(&SubjectMetrics::ha_rmse), 2);
    }
    std::snprintf(line, sizeof(line), "(%zu subjects)\n", subjects.size());
    out += line;
    return out;
  }
};

}  // namespace dccnn
