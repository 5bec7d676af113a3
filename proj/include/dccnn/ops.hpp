#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/graph.hpp"
#include "dccnn/tensor.hpp"

namespace dccnn::ad {

namespace detail {

// out[0..n) += w * in[0..n)
template <class T>
inline void axpy(T w, const T* in, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += w * in[i];
}

// Eight interleaved partial sums so the compiler can vectorize the reduction
// without -ffast-math; the summation order is fixed and therefore
// deterministic.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  T tail{0};
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

// Valid output/input row and column windows for one kernel tap with offset
// (dy, dx): output (y, x) reads input (y + dy, x + dx).
struct TapWindow {
  std::size_t y0, y1, x0, x1;
  bool empty() const { return y0 >= y1 || x0 >= x1; }
};

inline TapWindow tap_window(std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h, std::size_t w) {
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  const auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t lo, std::ptrdiff_t hi) {
    return v < lo ? lo : (v > hi ? hi : v);
  };
  return TapWindow{static_cast<std::size_t>(clampi(-dy, 0, H)),
                   static_cast<std::size_t>(clampi(H - dy, 0, H)),
                   static_cast<std::size_t>(clampi(-dx, 0, W)),
                   static_cast<std::size_t>(clampi(W - dx, 0, W))};
}

// Flat index of input row yy + dy, column x0 + dx inside one plane.
inline std::size_t shifted(std::size_t yy, std::ptrdiff_t dy, std::size_t x0, std::ptrdiff_t dx,
                           std::size_t w) {
  return static_cast<std::size_t>((static_cast<std::ptrdiff_t>(yy) + dy) *
                                      static_cast<std::ptrdiff_t>(w) +
                                  static_cast<std::ptrdiff_t>(x0) + dx);
}

}  // namespace detail

/// 2D cross-correlation with dilation and "same" zero padding.
/// input [B, Cin, H, W], weight [Cout, Cin, k, k] (k odd), bias [Cout].
template <class T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t dilation) {
  if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError("conv2d: expected input rank 4, weight rank 4, bias rank 1");
  }
  const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != Cin) {
    throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != K || K % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.dim(0) != Cout) throw ShapeError("conv2d: bias length differs from output channels");
  if (dilation == 0) throw ShapeError("conv2d: dilation must be positive");

  const std::size_t plane = H * W;
  const auto r = static_cast<std::ptrdiff_t>(K / 2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* bi = bias.data().data();

  std::vector<T> out(B * Cout * plane);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Cout; ++co) {
      T* o = out.data() + (b * Cout + co) * plane;
      std::fill(o, o + plane, bi[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* xi = x + (b * Cin + ci) * plane;
        const T* wk = w + (co * Cin + ci) * K * K;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const auto dy = (static_cast<std::ptrdiff_t>(ky) - r) * d;
          for (std::size_t kx = 0; kx < K; ++kx) {
            const auto dx = (static_cast<std::ptrdiff_t>(kx) - r) * d;
            const auto win = detail::tap_window(dy, dx, H, W);
            if (win.empty()) continue;
            const T wv = wk[ky * K + kx];
            for (std::size_t yy = win.y0; yy < win.y1; ++yy) {
              detail::axpy(wv, xi + detail::shifted(yy, dy, win.x0, dx, W), o + yy * W + win.x0,
                           win.x1 - win.x0);
            }
          }
        }
      }
    }
  }

  auto backward = [input, weight, B, Cin, Cout, H, W, K, r, d, plane](
                      std::span<const T> gout, std::span<const std::span<T>> gin) {
    const T* x = input.data().data();
    const T* w = weight.data().data();
    const T* go = gout.data();
    if (!gin[0].empty()) {
      T* gx = gin[0].data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          T* gxi = gx + (b * Cin + ci) * plane;
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* gop = go + (b * Cout + co) * plane;
            const T* wk = w + (co * Cin + ci) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
              const auto dy = (static_cast<std::ptrdiff_t>(ky) - r) * d;
              for (std::size_t kx = 0; kx < K; ++kx) {
                const auto dx = (static_cast<std::ptrdiff_t>(kx) - r) * d;
                const auto win = detail::tap_window(dy, dx, H, W);
                if (win.empty()) continue;
                const T wv = wk[ky * K + kx];
                for (std::size_t yy = win.y0; yy < win.y1; ++yy) {
                  detail::axpy(wv, gop + yy * W + win.x0, gxi + detail::shifted(yy, dy, win.x0, dx, W),
                               win.x1 - win.x0);
                }
              }
            }
          }
        }
      }
    }
    if (!gin[1].empty()) {
      T* gw = gin[1].data();
      for (std::size_t co = 0; co < Cout; ++co) {
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          T* gwk = gw + (co * Cin + ci) * K * K;
          for (std::size_t ky = 0; ky < K; ++ky) {
            const auto dy = (static_cast<std::ptrdiff_t>(ky) - r) * d;
            for (std::size_t kx = 0; kx < K; ++kx) {
              const auto dx = (static_cast<std::ptrdiff_t>(kx) - r) * d;
              const auto win = detail::tap_window(dy, dx, H, W);
              if (win.empty()) continue;
              T acc{0};
              for (std::size_t b = 0; b < B; ++b) {
                const T* gop = go + (b * Cout + co) * plane;
                const T* xi = x + (b * Cin + ci) * plane;
                for (std::size_t yy = win.y0; yy < win.y1; ++yy) {
                  acc += detail::dot(gop + yy * W + win.x0, xi + detail::shifted(yy, dy, win.x0, dx, W),
                                     win.x1 - win.x0);
                }
              }
              gwk[ky * K + kx] += acc;
            }
          }
        }
      }
    }
    if (!gin[2].empty()) {
      T* gb = gin[2].data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < Cout; ++co) {
          const T* gop = go + (b * Cout + co) * plane;
          T acc{0};
          for (std::size_t i = 0; i < plane; ++i) acc += gop[i];
          gb[co] += acc;
        }
      }
    }
  };
  return g.record(Shape{B, Cout, H, W}, std::move(out), {input, weight, bias}, std::move(backward));
}

/// max(x, alpha*x); the subgradient at exactly 0 is alpha.
template <class T>
Tensor<T> leaky_relu(Graph<T>& g, const Tensor<T>& x, T alpha) {
  if (!(alpha >= T{0} && alpha < T{1})) throw std::invalid_argument("leaky_relu: alpha must be in [0,1)");
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > T{0} ? xs[i] : alpha * xs[i];
  auto backward = [x, alpha](std::span<const T> gout, std::span<const std::span<T>> gin) {
    const auto xs = x.data();
    auto gx = gin[0];
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += xs[i] > T{0} ? gout[i] : alpha * gout[i];
  };
  return g.record(x.shape(), std::move(out), {x}, std::move(backward));
}

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "add");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  auto backward = [](std::span<const T> gout, std::span<const std::span<T>> gin) {
    for (const auto& gi : gin) {
      if (gi.empty()) continue;
      for (std::size_t i = 0; i < gout.size(); ++i) gi[i] += gout[i];
    }
  };
  return g.record(a.shape(), std::move(out), {a, b}, std::move(backward));
}

/// Elementwise product.
template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "mul");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  auto backward = [a, b](std::span<const T> gout, std::span<const std::span<T>> gin) {
    const auto as = a.data();
    const auto bs = b.data();
    if (!gin[0].empty())
      for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * bs[i];
    if (!gin[1].empty())
      for (std::size_t i = 0; i < gout.size(); ++i) gin[1][i] += gout[i] * as[i];
  };
  return g.record(a.shape(), std::move(out), {a, b}, std::move(backward));
}

template <class T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  auto backward = [](std::span<const T> gout, std::span<const std::span<T>> gin) {
    for (auto& v : gin[0]) v += gout[0];
  };
  return g.record(Shape{1}, std::vector<T>{acc}, {x}, std::move(backward));
}

/// Mean over all elements of (pred - target)^2.
template <class T>
Tensor<T> mse_loss(Graph<T>& g, const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  const std::size_t n = p.size();
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = p[i] - t[i];
    acc += diff * diff;
  }
  auto backward = [pred, target, n](std::span<const T> gout, std::span<const std::span<T>> gin) {
    const auto p = pred.data();
    const auto t = target.data();
    const T scale = T{2} * gout[0] / static_cast<T>(n);
    if (!gin[0].empty())
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += scale * (p[i] - t[i]);
    if (!gin[1].empty())
      for (std::size_t i = 0; i < n; ++i) gin[1][i] -= scale * (p[i] - t[i]);
  };
  return g.record(Shape{1}, std::vector<T>{acc / static_cast<T>(n)}, {pred, target},
                  std::move(backward));
}

enum class NormMode { kTrain, kEval };

/// Running statistics of one batch-norm layer. Updated in train mode only.
template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

/// Per-channel normalization of x [B, C, H, W] over (B, H, W).
template <class T>
Tensor<T> batch_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, NormMode mode) {
  if (x.rank() != 4) throw ShapeError("batch_norm: expected rank-4 input");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_shape(gamma, Shape{C}, "batch_norm gamma");
  require_shape(beta, Shape{C}, "batch_norm beta");
  if (state.running_mean.size() != C || state.running_var.size() != C) {
    throw ShapeError("batch_norm: running statistics have the wrong channel count");
  }
  const std::size_t count = B * plane;
  if (mode == NormMode::kTrain && count < 2) {
    throw ShapeError("batch_norm: train mode needs at least two values per channel");
  }

  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  std::vector<T> xhat(xs.size());
  std::vector<T> inv_std(C);
  std::vector<T> out(xs.size());

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == NormMode::kTrain) {
      T acc{0};
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xs.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mean = acc / static_cast<T>(count);
      T sq{0};
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xs.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = sq / static_cast<T>(count - 1);
      state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (T{1} - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = T{1} / std::sqrt(var + state.eps);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (xs[off + i] - mean) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gs[c] * h + bs[c];
      }
    }
  }

  auto backward = [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, plane, count,
                   mode](std::span<const T> gout, std::span<const std::span<T>> gin) {
    const auto gs = gamma.data();
    for (std::size_t c = 0; c < C; ++c) {
      T sum_g{0}, sum_gh{0};
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gout[off + i];
          sum_gh += gout[off + i] * xhat[off + i];
        }
      }
      if (!gin[1].empty()) gin[1][c] += sum_gh;
      if (!gin[2].empty()) gin[2][c] += sum_g;
      if (gin[0].empty()) continue;
      const T scale = gs[c] * inv_std[c];
      if (mode == NormMode::kEval) {
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) gin[0][off + i] += scale * gout[off + i];
        }
        continue;
      }
      const T n = static_cast<T>(count);
      const T mean_g = sum_g / n;
      const T mean_gh = sum_gh / n;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gin[0][off + i] += scale * (gout[off + i] - mean_g - xhat[off + i] * mean_gh);
        }
      }
    }
  };
  return g.record(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward));
}

}  // namespace dccnn::ad
