#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/kspace.hpp"
#include "dccnn/random.hpp"

namespace dccnn {

/// Parameters of a pseudo-random 1D variable-density Cartesian mask.
struct MaskSpec {
  std::size_t ny = 0;
  double uf = 1.0;
  /// Gaussian std of the line distribution as a fraction of ny.
  double sigma_fraction = 0.25;
  /// Lines around the k-space origin that are always acquired.
  std::size_t center_lines = 1;
  std::uint64_t seed = 0;
};

/// Number of lines a mask with this spec acquires: round(ny / uf), at least 1.
inline std::size_t target_line_count(std::size_t ny, double uf) {
  const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(ny) / uf));
  return n < 1 ? 1 : n;
}

/// Draws round(ny/uf) distinct phase-encode lines. The forced centre block
/// is taken first; the rest are drawn from a Gaussian centred on the k-space
/// origin (line ny/2) and rejected when out of range or already taken.
inline SamplingMask generate_mask(const MaskSpec& spec) {
  if (spec.ny == 0) throw std::invalid_argument("generate_mask: ny must be positive");
  if (!(spec.uf >= 1.0) || !(spec.uf <= static_cast<double>(spec.ny))) {
    throw std::invalid_argument("generate_mask: uf must lie in [1, ny], got " + std::to_string(spec.uf));
  }
  if (!(spec.sigma_fraction > 0.0)) {
    throw std::invalid_argument("generate_mask: sigma_fraction must be positive");
  }
  const std::size_t target = target_line_count(spec.ny, spec.uf);
  std::vector<bool> lines(spec.ny, false);
  if (target == spec.ny) return SamplingMask(std::vector<bool>(spec.ny, true));

  const auto centre = static_cast<std::ptrdiff_t>(spec.ny / 2);
  const std::size_t forced = std::min(spec.center_lines, target);
  const auto first = centre - static_cast<std::ptrdiff_t>((forced - (forced > 0 ? 1 : 0)) / 2);
  std::size_t taken = 0;
  for (std::size_t i = 0; i < forced; ++i) {
    const auto idx = first + static_cast<std::ptrdiff_t>(i);
    if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(spec.ny) && !lines[static_cast<std::size_t>(idx)]) {
      lines[static_cast<std::size_t>(idx)] = true;
      ++taken;
    }
  }

  Rng rng(spec.seed);
  const double sigma = spec.sigma_fraction * static_cast<double>(spec.ny);
  constexpr std::uint64_t kMaxDraws = 50'000'000;
  std::uint64_t draws = 0;
  while (taken < target) {
    if (++draws > kMaxDraws) {
      throw std::runtime_error("generate_mask: sampling stalled; sigma_fraction too small for uf");
    }
    const auto idx = centre + static_cast<std::ptrdiff_t>(std::llround(sigma * standard_normal(rng)));
    if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(spec.ny)) continue;
    auto slot = lines[static_cast<std::size_t>(idx)];
    if (slot) continue;
    slot = true;
    ++taken;
  }
  return SamplingMask(std::move(lines));
}

}  // namespace dccnn
