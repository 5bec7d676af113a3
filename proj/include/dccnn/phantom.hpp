#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/dtfit.hpp"
#include "dccnn/kspace.hpp"
#include "dccnn/protocol.hpp"
#include "dccnn/random.hpp"

namespace dccnn {

/// Short-axis left-ventricle phantom. Lengths are in pixels, angles in
/// degrees, diffusivities in mm^2/s, noise as a fraction of S0.
struct PhantomSpec {
  std::size_t nx = 64, ny = 64;
  double cx = 32.0, cy = 32.0;
  double r_endo = 12.0, r_epi = 20.0;
  double ha_endo = 60.0, ha_epi = -60.0;
  std::array<double, 3> eigenvalues{1.7e-3, 0.6e-3, 0.3e-3};
  double s0 = 1.0;
  double background = 0.2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (nx == 0 || ny == 0) throw std::invalid_argument("PhantomSpec: empty grid");
    const double limit = 0.5 * static_cast<double>(std::min(nx, ny));
    if (!(r_endo > 0.0 && r_endo < r_epi && r_epi <= limit)) {
      throw std::invalid_argument("PhantomSpec: need 0 < r_endo < r_epi <= min(nx, ny) / 2");
    }
    const auto& l = eigenvalues;
    if (!(l[0] >= l[1] && l[1] >= l[2] && l[2] > 0.0)) {
      throw std::invalid_argument("PhantomSpec: eigenvalues must satisfy l1 >= l2 >= l3 > 0");
    }
    if (!(s0 > 0.0) || !(noise_sigma >= 0.0)) throw std::invalid_argument("PhantomSpec: bad S0 or noise");
  }
  bool operator==(const PhantomSpec&) const = default;
};

/// Ground truth of one phantom: tensors (fitted where myocardium), HA,
/// FA and MD maps and the myocardium masks.
struct PhantomTruth {
  DiffusionTensorField field;
  std::vector<double> ha;
  std::vector<double> fa;
  std::vector<double> md;
  std::vector<std::uint8_t> myocardium;
  /// Myocardium pixels whose four neighbours are myocardium as well.
  std::vector<std::uint8_t> interior;
};

/// Transmural depth in [0, 1] from endocardium to epicardium, or a negative
/// value outside the wall.
inline double transmural_depth(const PhantomSpec& spec, double px, double py) {
  const double r = std::hypot(px - spec.cx, py - spec.cy);
  if (r < spec.r_endo || r > spec.r_epi) return -1.0;
  return (r - spec.r_endo) / (spec.r_epi - spec.r_endo);
}

/// Tensor field with a helix angle varying linearly through the wall. The
/// primary eigenvector is cos(HA) circumferential + sin(HA) longitudinal,
/// the secondary is radial, the tertiary completes the frame.
inline PhantomTruth make_tensor_field(const PhantomSpec& spec) {
  spec.validate();
  PhantomTruth t;
  const std::size_t np = spec.nx * spec.ny;
  t.field = DiffusionTensorField(spec.nx, spec.ny);
  t.ha.assign(np, 0.0);
  t.fa.assign(np, 0.0);
  t.md.assign(np, 0.0);
  t.myocardium.assign(np, 0);
  t.interior.assign(np, 0);
  const auto& lam = spec.eigenvalues;
  const double fa_value = fa(lam[0], lam[1], lam[2]);
  const double md_value = md(lam[0], lam[1], lam[2]);
  for (std::size_t y = 0; y < spec.ny; ++y) {
    for (std::size_t x = 0; x < spec.nx; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const double depth = transmural_depth(spec, px, py);
      if (depth < 0.0) continue;
      const std::size_t i = y * spec.nx + x;
      const double ha = spec.ha_endo + depth * (spec.ha_epi - spec.ha_endo);
      const auto frame = local_frame(px, py, spec.cx, spec.cy);
      const double a = ha * std::numbers::pi / 180.0;
      const Vec3 e1{std::cos(a) * frame.circumferential[0] + std::sin(a) * frame.longitudinal[0],
                    std::cos(a) * frame.circumferential[1] + std::sin(a) * frame.longitudinal[1],
                    std::cos(a) * frame.circumferential[2] + std::sin(a) * frame.longitudinal[2]};
      const Vec3 e2 = frame.radial;
      const Vec3 e3 = cross(e1, e2);
      t.field.tensors[i] = Sym3::from_eigen(lam, {e1, e2, e3});
      t.field.s0[i] = spec.s0;
      t.field.status[i] = FitStatus::kValid;
      t.ha[i] = ha;
      t.fa[i] = fa_value;
      t.md[i] = md_value;
      t.myocardium[i] = 1;
    }
  }
  for (std::size_t y = 1; y + 1 < spec.ny; ++y) {
    for (std::size_t x = 1; x + 1 < spec.nx; ++x) {
      const std::size_t i = y * spec.nx + x;
      t.interior[i] = t.myocardium[i] && t.myocardium[i - 1] && t.myocardium[i + 1] &&
                      t.myocardium[i - spec.nx] && t.myocardium[i + spec.nx];
    }
  }
  return t;
}

/// Diffusion-weighted images of one phantom with their protocol and truth.
/// images[entry * averages + average].
struct DWIStack {
  PhantomSpec spec;
  DiffusionProtocol protocol;
  std::vector<ComplexImage> images;
  PhantomTruth truth;
};

/// Stejskal-Tanner signal S0 exp(-b g^T D g) in the myocardium and a constant
/// background elsewhere, plus independent complex Gaussian noise of std
/// noise_sigma * S0 per channel and per average (Rician magnitude).
inline DWIStack simulate_dwi(const PhantomTruth& truth, const DiffusionProtocol& protocol,
                             const PhantomSpec& spec) {
  spec.validate();
  if (protocol.averages == 0 || protocol.entries.empty()) throw std::invalid_argument("simulate_dwi: empty protocol");
  DWIStack stack;
  stack.spec = spec;
  stack.protocol = protocol;
  stack.truth = truth;
  Rng rng(mix_seed(spec.seed, 0xD1));
  const double noise = spec.noise_sigma * spec.s0;
  const std::size_t np = spec.nx * spec.ny;
  for (const auto& entry : protocol.entries) {
    std::vector<double> clean(np, spec.background);
    for (std::size_t i = 0; i < np; ++i) {
      if (truth.myocardium[i]) clean[i] = spec.s0 * std::exp(-entry.b * truth.field.tensors[i].quadratic(entry.g));
    }
    for (std::size_t a = 0; a < protocol.averages; ++a) {
      ComplexImage img = ComplexImage::from_real(spec.nx, spec.ny, clean);
      if (noise > 0.0) {
        for (auto& v : img.data) v += noise * standard_normal(rng);
      }
      stack.images.push_back(std::move(img));
    }
  }
  return stack;
}

inline DWIStack make_phantom(const PhantomSpec& spec, const DiffusionProtocol& protocol) {
  return simulate_dwi(make_tensor_field(spec), protocol, spec);
}

/// Ranges for per-subject geometry randomization around a base spec.
struct DatasetSpec {
  std::size_t n_train = 20, n_val = 4, n_test = 4;
  PhantomSpec base;
  double center_jitter = 3.0;
  std::array<double, 2> r_endo{9.0, 13.0};
  std::array<double, 2> thickness{6.0, 9.0};
  std::array<double, 2> ha_endo{50.0, 70.0};
  std::array<double, 2> ha_epi{-70.0, -50.0};
};

struct Subject {
  std::string name;
  DWIStack stack;
};

struct Dataset {
  std::vector<Subject> train, val, test;
};

/// Subject k uses a geometry drawn from a sub-stream of `seed`; splits are
/// consecutive blocks of subjects, so they never share a subject.
inline PhantomSpec subject_spec(const DatasetSpec& ds, std::uint64_t seed, std::size_t k) {
  Rng rng(mix_seed(seed, k));
  const auto pick = [&rng](const std::array<double, 2>& r) { return r[0] + (r[1] - r[0]) * uniform01(rng); };
  PhantomSpec s = ds.base;
  s.cx = ds.base.cx + ds.center_jitter * (2.0 * uniform01(rng) - 1.0);
  s.cy = ds.base.cy + ds.center_jitter * (2.0 * uniform01(rng) - 1.0);
  s.r_endo = pick(ds.r_endo);
  s.r_epi = s.r_endo + pick(ds.thickness);
  s.ha_endo = pick(ds.ha_endo);
  s.ha_epi = pick(ds.ha_epi);
  s.seed = mix_seed(seed, k, 0x5EED);
  return s;
}

inline Dataset make_dataset(const DatasetSpec& ds, const DiffusionProtocol& protocol, std::uint64_t seed) {
  Dataset out;
  const std::size_t total = ds.n_train + ds.n_val + ds.n_test;
  for (std::size_t k = 0; k < total; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "subject_%03zu", k);
    Subject subj{name, make_phantom(subject_spec(ds, seed, k), protocol)};
    if (k < ds.n_train) {
      out.train.push_back(std::move(subj));
    } else if (k < ds.n_train + ds.n_val) {
      out.val.push_back(std::move(subj));
    } else {
      out.test.push_back(std::move(subj));
    }
  }
  return out;
}

}  // namespace dccnn
