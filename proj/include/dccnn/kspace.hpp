#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/graph.hpp"
#include "dccnn/tensor.hpp"

namespace dccnn {

using cplx = std::complex<double>;

/// Complex image stored as two real planes [2, ny, nx]: real then imaginary.
struct ComplexImage {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<double> data;

  ComplexImage() = default;
  ComplexImage(std::size_t nx_, std::size_t ny_) : nx(nx_), ny(ny_), data(2 * nx_ * ny_, 0.0) {}

  std::size_t pixels() const { return nx * ny; }
  double& re(std::size_t y, std::size_t x) { return data[y * nx + x]; }
  double& im(std::size_t y, std::size_t x) { return data[pixels() + y * nx + x]; }
  double re(std::size_t y, std::size_t x) const { return data[y * nx + x]; }
  double im(std::size_t y, std::size_t x) const { return data[pixels() + y * nx + x]; }
  cplx at(std::size_t i) const { return {data[i], data[pixels() + i]}; }
  void set(std::size_t i, cplx v) {
    data[i] = v.real();
    data[pixels() + i] = v.imag();
  }

  std::vector<double> magnitude() const {
    std::vector<double> m(pixels());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(data[i], data[pixels() + i]);
    return m;
  }

  static ComplexImage from_real(std::size_t nx, std::size_t ny, std::span<const double> values) {
    ComplexImage img(nx, ny);
    if (values.size() != img.pixels()) throw ShapeError("ComplexImage::from_real: size mismatch");
    std::copy(values.begin(), values.end(), img.data.begin());
    return img;
  }

  bool operator==(const ComplexImage&) const = default;
};

/// Full Cartesian k-space grid, zero at unacquired samples. Row y is the
/// phase-encode line y; the k-space origin sits at (ny/2, nx/2).
struct KSpaceData {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<cplx> samples;

  KSpaceData() = default;
  KSpaceData(std::size_t nx_, std::size_t ny_) : nx(nx_), ny(ny_), samples(nx_ * ny_) {}
  cplx& operator()(std::size_t y, std::size_t x) { return samples[y * nx + x]; }
  cplx operator()(std::size_t y, std::size_t x) const { return samples[y * nx + x]; }
};

/// Acquired phase-encode lines. The index set covers every readout column of
/// each selected line, so the mask itself is independent of nx.
struct SamplingMask {
  std::vector<bool> lines;

  SamplingMask() = default;
  explicit SamplingMask(std::vector<bool> l) : lines(std::move(l)) {}
  static SamplingMask full(std::size_t ny) { return SamplingMask(std::vector<bool>(ny, true)); }
  static SamplingMask empty(std::size_t ny) { return SamplingMask(std::vector<bool>(ny, false)); }

  std::size_t ny() const { return lines.size(); }
  bool sampled(std::size_t y) const { return lines[y]; }
  std::size_t sampled_count() const {
    std::size_t n = 0;
    for (bool b : lines) n += b ? 1 : 0;
    return n;
  }
  /// Sorted indices of the acquired lines.
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < lines.size(); ++i)
      if (lines[i]) out.push_back(i);
    return out;
  }
  static SamplingMask from_indices(std::size_t ny, std::span<const std::size_t> idx) {
    std::vector<bool> l(ny, false);
    for (auto i : idx) {
      if (i >= ny) throw DataError("mask line index " + std::to_string(i) + " out of range");
      l[i] = true;
    }
    return SamplingMask(std::move(l));
  }
  bool operator==(const SamplingMask&) const = default;
};

/// Undersampling factor ny / (number of sampled lines).
inline double effective_uf(const SamplingMask& mask) {
  const auto n = mask.sampled_count();
  if (n == 0) throw std::invalid_argument("effective_uf: mask has no sampled lines");
  return static_cast<double>(mask.ny()) / static_cast<double>(n);
}

/// Data-consistency weight lambda0 = lambda / mu; nullopt means lambda0 -> inf
/// (acquired samples are copied verbatim).
struct DCParams {
  std::optional<double> lambda0;

  static DCParams hard() { return {}; }
  static DCParams soft(double lambda0) {
    if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) {
      throw std::invalid_argument("DCParams: lambda0 must be finite and >= 0");
    }
    return DCParams{lambda0};
  }
  bool is_hard() const { return !lambda0.has_value(); }
  /// Weight kept from the network estimate at acquired samples, 1/(1+lambda0).
  double keep() const { return is_hard() ? 0.0 : 1.0 / (1.0 + *lambda0); }
  /// Weight given to the measurement at acquired samples, lambda0/(1+lambda0).
  double take() const { return is_hard() ? 1.0 : *lambda0 / (1.0 + *lambda0); }
  bool operator==(const DCParams&) const = default;
};

namespace detail {

// Centered unitary DFT matrix M[k][n] = exp(-+2 pi i (k-c)(n-c)/N)/sqrt(N),
// c = N/2. Equal to fftshift . fft . ifftshift with 1/sqrt(N) scaling.
struct DftMatrix {
  std::size_t n = 0;
  std::vector<cplx> forward;
  std::vector<cplx> inverse;
};

inline const DftMatrix& centered_dft(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<DftMatrix>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    auto m = std::make_unique<DftMatrix>();
    m->n = n;
    m->forward.resize(n * n);
    m->inverse.resize(n * n);
    const auto c = static_cast<long long>(n / 2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        // Reduce the phase index modulo n before scaling for accuracy.
        long long p = ((static_cast<long long>(k) - c) * (static_cast<long long>(j) - c)) %
                      static_cast<long long>(n);
        if (p < 0) p += static_cast<long long>(n);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(p) / static_cast<double>(n);
        m->forward[k * n + j] = std::polar(scale, -angle);
        m->inverse[k * n + j] = std::polar(scale, angle);
      }
    }
    slot = std::move(m);
  }
  return *slot;
}

// Plain complex dot product; std::complex operator* carries Annex G
// NaN/Inf recovery that is slow in inner loops.
inline cplx cdot(const cplx* a, const cplx* b, std::size_t n) {
  double re = 0.0, im = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    re += a[j].real() * b[j].real() - a[j].imag() * b[j].imag();
    im += a[j].real() * b[j].imag() + a[j].imag() * b[j].real();
  }
  return {re, im};
}

// In-place separable transform of an ny x nx row-major complex grid.
inline void transform2d(std::vector<cplx>& grid, std::size_t nx, std::size_t ny, bool inverse) {
  const auto& mx = centered_dft(nx);
  const auto& my = centered_dft(ny);
  const auto& ax = inverse ? mx.inverse : mx.forward;
  const auto& ay = inverse ? my.inverse : my.forward;
  std::vector<cplx> tmp(std::max(nx, ny));
  for (std::size_t y = 0; y < ny; ++y) {
    cplx* row = grid.data() + y * nx;
    for (std::size_t k = 0; k < nx; ++k) {
      tmp[k] = cdot(ax.data() + k * nx, row, nx);
    }
    std::copy(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(nx), row);
  }
  std::vector<cplx> col(ny);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) col[y] = grid[y * nx + x];
    for (std::size_t k = 0; k < ny; ++k) {
      grid[k * nx + x] = cdot(ay.data() + k * ny, col.data(), ny);
    }
  }
}

inline void require_grid(const SamplingMask& mask, std::size_t ny, const char* what) {
  if (mask.ny() != ny) {
    throw ShapeError(std::string(what) + ": mask has " + std::to_string(mask.ny()) +
                     " lines, grid has " + std::to_string(ny));
  }
}

}  // namespace detail

/// Centered, unitary 2D DFT.
inline KSpaceData fft2c(const ComplexImage& img) {
  KSpaceData k(img.nx, img.ny);
  for (std::size_t i = 0; i < img.pixels(); ++i) k.samples[i] = img.at(i);
  detail::transform2d(k.samples, img.nx, img.ny, false);
  return k;
}

/// Inverse of fft2c (its adjoint, since the transform is unitary).
inline ComplexImage ifft2c(const KSpaceData& k) {
  auto grid = k.samples;
  detail::transform2d(grid, k.nx, k.ny, true);
  ComplexImage img(k.nx, k.ny);
  for (std::size_t i = 0; i < img.pixels(); ++i) img.set(i, grid[i]);
  return img;
}

/// Keeps acquired lines, zeroes the rest.
inline KSpaceData apply_mask(KSpaceData k, const SamplingMask& mask) {
  detail::require_grid(mask, k.ny, "apply_mask");
  for (std::size_t y = 0; y < k.ny; ++y) {
    if (mask.sampled(y)) continue;
    for (std::size_t x = 0; x < k.nx; ++x) k(y, x) = cplx{};
  }
  return k;
}

/// Simulated acquisition y = F_u x.
inline KSpaceData undersample(const ComplexImage& img, const SamplingMask& mask) {
  return apply_mask(fft2c(img), mask);
}

/// x_u = F_u^H y.
inline ComplexImage zero_filled(const KSpaceData& y, const SamplingMask& mask) {
  return ifft2c(apply_mask(y, mask));
}

/// Closed-form data consistency: in k-space the estimate is kept off the
/// acquired lines and blended (Fz + lambda0 y) / (1 + lambda0) on them;
/// hard mode copies y.
inline ComplexImage data_consistency(const ComplexImage& z, const KSpaceData& y,
                                     const SamplingMask& mask, const DCParams& params) {
  if (z.nx != y.nx || z.ny != y.ny) throw ShapeError("data_consistency: image and k-space grids differ");
  detail::require_grid(mask, y.ny, "data_consistency");
  KSpaceData k = fft2c(z);
  const double keep = params.keep();
  const double take = params.take();
  for (std::size_t r = 0; r < k.ny; ++r) {
    if (!mask.sampled(r)) continue;
    for (std::size_t c = 0; c < k.nx; ++c) {
      k(r, c) = params.is_hard() ? y(r, c) : keep * k(r, c) + take * y(r, c);
    }
  }
  return ifft2c(k);
}

// ---------------------------------------------------------------------------
// Network-side helpers: batches of images as [B, 2, ny, nx] tensors.

template <class T>
ad::Tensor<T> images_to_tensor(std::span<const ComplexImage> images, bool requires_grad = false) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto nx = images[0].nx, ny = images[0].ny;
  std::vector<T> values;
  values.reserve(images.size() * 2 * nx * ny);
  for (const auto& img : images) {
    if (img.nx != nx || img.ny != ny) throw ShapeError("images_to_tensor: mixed image sizes");
    for (double v : img.data) values.push_back(static_cast<T>(v));
  }
  return ad::Tensor<T>(ad::Shape{images.size(), 2, ny, nx}, std::move(values), requires_grad);
}

template <class T>
std::vector<ComplexImage> tensor_to_images(const ad::Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(1) != 2) throw ShapeError("tensor_to_images: expected [B,2,H,W]");
  const std::size_t B = t.dim(0), ny = t.dim(2), nx = t.dim(3);
  std::vector<ComplexImage> out;
  const auto d = t.data();
  for (std::size_t b = 0; b < B; ++b) {
    ComplexImage img(nx, ny);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(d[b * img.data.size() + i]);
    out.push_back(std::move(img));
  }
  return out;
}

/// Differentiable data-consistency layer over a batch z [B, 2, ny, nx].
/// z -> DC(z) is affine with Jacobian F^H Lambda F, which is self-adjoint, so
/// the backward pass applies the same Lambda-weighted projection to the
/// incoming gradient. Transforms run in double regardless of T.
template <class T>
ad::Tensor<T> dc_layer(ad::Graph<T>& g, const ad::Tensor<T>& z, std::span<const KSpaceData> y,
                       std::span<const SamplingMask> masks, const DCParams& params) {
  if (z.rank() != 4 || z.dim(1) != 2) throw ShapeError("dc_layer: expected [B,2,H,W]");
  const std::size_t B = z.dim(0), ny = z.dim(2), nx = z.dim(3), plane = 2 * nx * ny;
  if (y.size() != B || masks.size() != B) throw ShapeError("dc_layer: need one y and mask per batch item");

  std::vector<T> out(z.size());
  const auto zs = z.data();
  for (std::size_t b = 0; b < B; ++b) {
    ComplexImage img(nx, ny);
    for (std::size_t i = 0; i < plane; ++i) img.data[i] = static_cast<double>(zs[b * plane + i]);
    const auto res = data_consistency(img, y[b], masks[b], params);
    for (std::size_t i = 0; i < plane; ++i) out[b * plane + i] = static_cast<T>(res.data[i]);
  }

  std::vector<SamplingMask> saved(masks.begin(), masks.end());
  auto backward = [saved = std::move(saved), params, B, nx, ny, plane](
                      std::span<const T> gout, std::span<const std::span<T>> gin) {
    const double keep = params.keep();
    for (std::size_t b = 0; b < B; ++b) {
      ComplexImage gimg(nx, ny);
      for (std::size_t i = 0; i < plane; ++i) gimg.data[i] = static_cast<double>(gout[b * plane + i]);
      KSpaceData k = fft2c(gimg);
      for (std::size_t r = 0; r < ny; ++r) {
        if (!saved[b].sampled(r)) continue;
        for (std::size_t c = 0; c < nx; ++c) k(r, c) *= keep;
      }
      const auto back = ifft2c(k);
      for (std::size_t i = 0; i < plane; ++i) gin[0][b * plane + i] += static_cast<T>(back.data[i]);
    }
  };
  return g.record(z.shape(), std::move(out), {z}, std::move(backward));
}

}  // namespace dccnn
