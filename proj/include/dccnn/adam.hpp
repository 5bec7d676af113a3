#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dccnn/errors.hpp"
#include "dccnn/tensor.hpp"

namespace dccnn::ad {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter plus the step counter.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
  AdamOptions options;

  AdamState() = default;
  AdamState(std::span<const Tensor<T>> params, AdamOptions opts = {}) : options(opts) {
    for (const auto& p : params) {
      m.emplace_back(p.size(), T{0});
      v.emplace_back(p.size(), T{0});
    }
  }
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// grad(). The step is rejected (nothing modified) if any gradient is NaN/Inf.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].size()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(k));
    }
    const auto g = params[k].grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k) +
                           " at element " + std::to_string(i));
      }
    }
  }

  state.t += 1;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    const auto g = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

}  // namespace dccnn::ad
