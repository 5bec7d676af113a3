#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/graph.hpp"
#include "dccnn/kspace.hpp"
#include "dccnn/ops.hpp"
#include "dccnn/random.hpp"
#include "dccnn/tensor.hpp"

namespace dccnn {

/// 1 + 2 * sum(dilations) for a stack of 3x3 convolutions.
inline std::size_t receptive_field(std::span<const std::size_t> dilations) {
  std::size_t rf = 1;
  for (auto d : dilations) {
    if (d == 0) throw std::invalid_argument("receptive_field: dilations must be >= 1");
    rf += 2 * d;
  }
  return rf;
}

/// Probability that subnetwork i (1-based) is dropped during stochastic
/// training: (i - 1) / (2 n_c).
inline double drop_probability(std::size_t i, std::size_t n_cascades) {
  if (n_cascades == 0 || i < 1 || i > n_cascades) {
    throw std::out_of_range("drop_probability: index " + std::to_string(i) + " outside [1, " +
                            std::to_string(n_cascades) + "]");
  }
  return static_cast<double>(i - 1) / static_cast<double>(2 * n_cascades);
}

struct CascadeConfig {
  std::size_t n_cascades = 15;
  std::size_t layers_per_subnet = 6;
  std::size_t hidden_channels = 32;
  std::vector<std::size_t> dilations{1, 2, 4, 2, 1, 1};
  bool stochastic = true;
  bool batch_norm = true;
  DCParams dc = DCParams::hard();
  double leaky_alpha = 0.01;

  /// The tested desk-scale setting: 3 cascades of 16 channels.
  static CascadeConfig desk() {
    CascadeConfig c;
    c.n_cascades = 3;
    c.hidden_channels = 16;
    return c;
  }

  /// Undilated five-layer subnetworks.
  static CascadeConfig undilated(std::size_t n_cascades, std::size_t hidden) {
    CascadeConfig c;
    c.n_cascades = n_cascades;
    c.hidden_channels = hidden;
    c.layers_per_subnet = 5;
    c.dilations = {1, 1, 1, 1, 1};
    return c;
  }

  /// Convolution layers plus one DC layer per cascade.
  std::size_t total_layers() const { return (layers_per_subnet + 1) * n_cascades; }

  void validate() const {
    if (n_cascades == 0) throw std::invalid_argument("CascadeConfig: n_cascades must be >= 1");
    if (layers_per_subnet == 0) throw std::invalid_argument("CascadeConfig: need at least one layer");
    if (dilations.size() != layers_per_subnet) {
      throw std::invalid_argument("CascadeConfig: dilation schedule has " + std::to_string(dilations.size()) +
                                  " entries for " + std::to_string(layers_per_subnet) + " layers");
    }
    for (auto d : dilations)
      if (d == 0) throw std::invalid_argument("CascadeConfig: dilations must be >= 1");
    if (layers_per_subnet > 1 && hidden_channels == 0) {
      throw std::invalid_argument("CascadeConfig: hidden_channels must be >= 1");
    }
    if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) {
      throw std::invalid_argument("CascadeConfig: leaky_alpha must be in [0,1)");
    }
  }
  bool operator==(const CascadeConfig&) const = default;
};

template <class T>
struct ConvLayer {
  ad::Tensor<T> weight;  // [Cout, Cin, 3, 3]
  ad::Tensor<T> bias;    // [Cout]
  std::size_t dilation = 1;
  // Present on every layer but the last when batch norm is enabled.
  std::optional<ad::Tensor<T>> gamma;
  std::optional<ad::Tensor<T>> beta;
  ad::BatchNormState<T> bn_state;
  bool activation = true;
};

template <class T>
struct Subnet {
  std::vector<ConvLayer<T>> layers;
};

/// kFixed skips exactly the subnetworks flagged in ForwardOptions::pattern.
enum class DropMode { kDeterministic, kStochastic, kFixed };

struct ForwardOptions {
  DropMode drop = DropMode::kDeterministic;
  ad::NormMode norm = ad::NormMode::kEval;
  std::vector<bool> pattern;
};

template <class T>
struct ForwardResult {
  ad::Tensor<T> output;
  /// dropped[i] is true when subnetwork i+1 was skipped.
  std::vector<bool> dropped;
};

/// Cascade of residual denoising subnetworks, each followed by a DC layer.
template <class T>
class CascadeModel {
 public:
  CascadeModel() = default;

  /// He-normal convolution weights, the last layer of each subnetwork scaled
  /// by 0.1 so the untrained cascade is close to the identity; zero biases,
  /// gamma = 1, beta = 0.
  static CascadeModel build(const CascadeConfig& config, std::uint64_t seed) {
    config.validate();
    CascadeModel model;
    model.config_ = config;
    Rng rng(seed);
    const std::size_t L = config.layers_per_subnet;
    for (std::size_t s = 0; s < config.n_cascades; ++s) {
      Subnet<T> net;
      for (std::size_t l = 0; l < L; ++l) {
        const bool last = l + 1 == L;
        const std::size_t cin = l == 0 ? 2 : config.hidden_channels;
        const std::size_t cout = last ? 2 : config.hidden_channels;
        ConvLayer<T> layer;
        layer.dilation = config.dilations[l];
        layer.activation = !last;
        const double std = std::sqrt(2.0 / static_cast<double>(cin * 9)) * (last ? 0.1 : 1.0);
        std::vector<T> w(cout * cin * 9);
        for (auto& v : w) v = static_cast<T>(std * standard_normal(rng));
        layer.weight = ad::Tensor<T>({cout, cin, 3, 3}, std::move(w), true);
        layer.bias = ad::Tensor<T>::zeros({cout}, true);
        if (config.batch_norm && !last) {
          layer.gamma = ad::Tensor<T>({cout}, std::vector<T>(cout, T{1}), true);
          layer.beta = ad::Tensor<T>::zeros({cout}, true);
          layer.bn_state = ad::BatchNormState<T>(cout);
        }
        net.layers.push_back(std::move(layer));
      }
      model.subnets_.push_back(std::move(net));
    }
    return model;
  }

  const CascadeConfig& config() const { return config_; }
  std::size_t n_cascades() const { return subnets_.size(); }
  Subnet<T>& subnet(std::size_t i) { return subnets_.at(i - 1); }
  const Subnet<T>& subnet(std::size_t i) const { return subnets_.at(i - 1); }

  /// Trainable tensors (weights, biases, gamma, beta) in a fixed order.
  std::vector<ad::Tensor<T>> parameters() const {
    std::vector<ad::Tensor<T>> out;
    for (const auto& net : subnets_) {
      for (const auto& l : net.layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
        if (l.gamma) out.push_back(*l.gamma);
        if (l.beta) out.push_back(*l.beta);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }

  /// Independent copy (parameters and running statistics).
  CascadeModel clone() const {
    CascadeModel copy;
    copy.config_ = config_;
    for (const auto& net : subnets_) {
      Subnet<T> n;
      for (const auto& l : net.layers) {
        ConvLayer<T> c = l;
        c.weight = l.weight.clone();
        c.bias = l.bias.clone();
        if (l.gamma) c.gamma = l.gamma->clone();
        if (l.beta) c.beta = l.beta->clone();
        n.layers.push_back(std::move(c));
      }
      copy.subnets_.push_back(std::move(n));
    }
    return copy;
  }

  /// Overwrites every parameter and running statistic with those of `other`,
  /// keeping this model's tensor identities (so optimizer state stays valid).
  void assign_from(const CascadeModel& other) {
    if (!(other.config_ == config_)) throw std::invalid_argument("assign_from: configuration mismatch");
    for (std::size_t s = 0; s < subnets_.size(); ++s) {
      for (std::size_t l = 0; l < subnets_[s].layers.size(); ++l) {
        auto& dst = subnets_[s].layers[l];
        const auto& src = other.subnets_[s].layers[l];
        std::ranges::copy(src.weight.data(), dst.weight.data().begin());
        std::ranges::copy(src.bias.data(), dst.bias.data().begin());
        if (dst.gamma) std::ranges::copy(src.gamma->data(), dst.gamma->data().begin());
        if (dst.beta) std::ranges::copy(src.beta->data(), dst.beta->data().begin());
        dst.bn_state = src.bn_state;
      }
    }
  }

 private:
  CascadeConfig config_;
  std::vector<Subnet<T>> subnets_;
};

/// x + f_i(x) for subnetwork i (1-based). f_i is conv (-> BN) -> leaky ReLU
/// repeated, ending in a plain convolution back to two channels.
template <class T>
ad::Tensor<T> subnet_forward(ad::Graph<T>& g, CascadeModel<T>& model, std::size_t i,
                             const ad::Tensor<T>& x, ad::NormMode norm) {
  if (i < 1 || i > model.n_cascades()) throw std::out_of_range("subnet_forward: bad subnetwork index");
  const T alpha = static_cast<T>(model.config().leaky_alpha);
  ad::Tensor<T> h = x;
  for (auto& layer : model.subnet(i).layers) {
    h = ad::conv2d(g, h, layer.weight, layer.bias, layer.dilation);
    if (layer.gamma) h = ad::batch_norm(g, h, *layer.gamma, *layer.beta, layer.bn_state, norm);
    if (layer.activation) h = ad::leaky_relu(g, h, alpha);
  }
  return ad::add(g, x, h);
}

/// Unrolled reconstruction: for each cascade, the residual subnetwork
/// (skipped when dropped) followed by the DC layer, which always runs.
/// In stochastic mode subnetwork i is dropped with drop_probability(i, n_c),
/// independently per call; `rng` is required then.
template <class T>
ForwardResult<T> forward(ad::Graph<T>& g, CascadeModel<T>& model, const ad::Tensor<T>& x_u,
                         std::span<const KSpaceData> y, std::span<const SamplingMask> masks,
                         const ForwardOptions& opts, Rng* rng = nullptr) {
  const bool stochastic = opts.drop == DropMode::kStochastic;
  if (stochastic && rng == nullptr) {
    throw std::invalid_argument("forward: stochastic mode needs a random generator");
  }
  const std::size_t n = model.n_cascades();
  if (opts.drop == DropMode::kFixed && opts.pattern.size() != n) {
    throw std::invalid_argument("forward: drop pattern needs one flag per subnetwork");
  }
  ForwardResult<T> res;
  res.dropped.assign(n, false);
  if (opts.drop == DropMode::kFixed) res.dropped = opts.pattern;
  ad::Tensor<T> x = x_u;
  for (std::size_t i = 1; i <= n; ++i) {
    if (stochastic) res.dropped[i - 1] = bernoulli(*rng, drop_probability(i, n));
    if (!res.dropped[i - 1]) x = subnet_forward(g, model, i, x, opts.norm);
    x = dc_layer(g, x, y, masks, model.config().dc);
  }
  res.output = x;
  return res;
}

/// Inference on one acquisition with all subnetworks and running BN
/// statistics.
template <class T>
ComplexImage reconstruct(CascadeModel<T>& model, const KSpaceData& y, const SamplingMask& mask) {
  ad::Graph<T> g(false);
  const ComplexImage xu = zero_filled(y, mask);
  const auto x = images_to_tensor<T>(std::span(&xu, 1));
  auto res = forward(g, model, x, std::span(&y, 1), std::span(&mask, 1), ForwardOptions{});
  return tensor_to_images(res.output).front();
}

struct EnsembleResult {
  ComplexImage mean;                  // complex mean of the members
  std::vector<double> mean_magnitude; // pixelwise mean of |member|
  std::vector<double> std_magnitude;  // pixelwise sample std of |member|
  std::size_t samples = 0;
};

/// Monte-Carlo ensemble over drop configurations. Member k draws its drop
/// pattern from a sub-stream of `seed`, so results do not depend on
/// evaluation order. BN uses running statistics.
template <class T>
EnsembleResult reconstruct_ensemble(CascadeModel<T>& model, const KSpaceData& y, const SamplingMask& mask,
                                    std::size_t samples, std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("reconstruct_ensemble: need at least 2 samples");
  if (!model.config().stochastic) throw std::invalid_argument("reconstruct_ensemble: model is not stochastic");
  const ComplexImage xu = zero_filled(y, mask);
  const auto x = images_to_tensor<T>(std::span(&xu, 1));
  const std::size_t np = xu.pixels();

  EnsembleResult res;
  res.samples = samples;
  res.mean = ComplexImage(xu.nx, xu.ny);
  res.mean_magnitude.assign(np, 0.0);
  std::vector<double> m2(np, 0.0);
  for (std::size_t k = 0; k < samples; ++k) {
    Rng rng(mix_seed(seed, k));
    ad::Graph<T> g(false);
    auto out = forward(g, model, x, std::span(&y, 1), std::span(&mask, 1),
                       ForwardOptions{DropMode::kStochastic, ad::NormMode::kEval, {}}, &rng);
    const auto img = tensor_to_images(out.output).front();
    const auto mag = img.magnitude();
    const double kk = static_cast<double>(k + 1);
    // Welford updates: identical members give exactly zero spread.
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      res.mean.data[i] += (img.data[i] - res.mean.data[i]) / kk;
    }
    for (std::size_t i = 0; i < np; ++i) {
      const double delta = mag[i] - res.mean_magnitude[i];
      res.mean_magnitude[i] += delta / kk;
      m2[i] += delta * (mag[i] - res.mean_magnitude[i]);
    }
  }
  res.std_magnitude.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    res.std_magnitude[i] = std::sqrt(std::max(0.0, m2[i] / static_cast<double>(samples - 1)));
  }
  return res;
}

}  // namespace dccnn
