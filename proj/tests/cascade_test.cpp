#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dccnn/cascade.hpp"
#include "dccnn/sampling.hpp"
#include "oracles.hpp"

using namespace dccnn;

namespace {

CascadeConfig tiny(std::size_t n_cascades, std::size_t hidden = 3) {
  CascadeConfig c = CascadeConfig::undilated(n_cascades, hidden);
  c.layers_per_subnet = 3;
  c.dilations = {1, 2, 1};
  return c;
}

struct Acquisition {
  ComplexImage gt;
  SamplingMask mask;
  KSpaceData y;
  ComplexImage xu;
};

Acquisition acquire(Rng& rng, std::size_t nx, std::size_t ny, double uf, std::uint64_t seed) {
  Acquisition a;
  a.gt = oracle::random_image(rng, nx, ny);
  a.mask = generate_mask({ny, uf, 0.25, 1, seed});
  a.y = undersample(a.gt, a.mask);
  a.xu = zero_filled(a.y, a.mask);
  return a;
}

template <class T>
void zero_weights(CascadeModel<T>& m) {
  for (auto p : m.parameters()) std::fill(p.data().begin(), p.data().end(), T{0});
}

// max over acquired samples of |F(out) - y| relative to max |y|.
double acquired_error(const ComplexImage& out, const Acquisition& a) {
  const auto k = fft2c(out);
  double err = 0.0, scale = 0.0;
  for (std::size_t r = 0; r < a.y.ny; ++r) {
    if (!a.mask.sampled(r)) continue;
    for (std::size_t c = 0; c < a.y.nx; ++c) {
      err = std::max(err, std::abs(k(r, c) - a.y(r, c)));
      scale = std::max(scale, std::abs(a.y(r, c)));
    }
  }
  return err / scale;
}

}  // namespace

TEST(ReceptiveField, Values) {
  EXPECT_EQ(receptive_field(std::vector<std::size_t>{1, 1, 1, 1, 1}), 11u);
  EXPECT_EQ(receptive_field(std::vector<std::size_t>{1, 2, 4, 2, 1, 1}), 23u);
  EXPECT_EQ(receptive_field(std::vector<std::size_t>{}), 1u);
  EXPECT_EQ(receptive_field(CascadeConfig{}.dilations), 23u);
}

TEST(DropProbability, Values) {
  EXPECT_EQ(drop_probability(1, 15), 0.0);
  EXPECT_EQ(drop_probability(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(drop_probability(15, 15), 14.0 / 30.0);
  EXPECT_DOUBLE_EQ(drop_probability(8, 15), 7.0 / 30.0);
  for (std::size_t i = 2; i <= 15; ++i) EXPECT_GT(drop_probability(i, 15), drop_probability(i - 1, 15));
  EXPECT_LT(drop_probability(15, 15), 0.5);
  EXPECT_THROW(drop_probability(0, 15), std::out_of_range);
  EXPECT_THROW(drop_probability(16, 15), std::out_of_range);
}

TEST(CascadeConfig, DefaultDepthAndValidation) {
  const CascadeConfig c;
  EXPECT_EQ(c.total_layers(), 105u);
  EXPECT_EQ(c.dilations.front(), 1u);
  EXPECT_EQ(c.dilations.back(), 1u);
  CascadeConfig bad = c;
  bad.dilations = {1, 2, 1};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.dilations[2] = 0;
  EXPECT_THROW(CascadeModel<double>::build(bad, 0), std::invalid_argument);
}

TEST(Build, ParameterCensus) {
  const CascadeConfig c;  // 15 cascades, 6 layers, 32 channels, BN
  const auto m = CascadeModel<float>::build(c, 1);
  const std::size_t h = 32;
  const std::size_t convs = (2 * h * 9 + h) + 4 * (h * h * 9 + h) + (h * 2 * 9 + 2);
  const std::size_t bn = 5 * 2 * h;
  EXPECT_EQ(m.parameter_count(), 15 * (convs + bn));
  EXPECT_EQ(m.parameters().size(), 15u * (6 * 2 + 5 * 2));
  for (std::size_t i = 1; i <= 15; ++i) {
    const auto& net = m.subnet(i);
    ASSERT_EQ(net.layers.size(), 6u);
    EXPECT_FALSE(net.layers.back().gamma.has_value());
    EXPECT_FALSE(net.layers.back().activation);
    EXPECT_EQ(net.layers.back().weight.shape(), (ad::Shape{2, h, 3, 3}));
  }
  auto nobn = c;
  nobn.batch_norm = false;
  EXPECT_EQ(CascadeModel<float>::build(nobn, 1).parameter_count(), 15 * convs);
}

TEST(Build, SameSeedSameParameters) {
  const auto a = CascadeModel<double>::build(CascadeConfig::desk(), 7);
  const auto b = CascadeModel<double>::build(CascadeConfig::desk(), 7);
  const auto c = CascadeModel<double>::build(CascadeConfig::desk(), 8);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    EXPECT_TRUE(std::equal(pa[k].data().begin(), pa[k].data().end(), pb[k].data().begin()));
    differs = differs || !std::equal(pa[k].data().begin(), pa[k].data().end(), pc[k].data().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(SubnetForward, ZeroWeightsGiveIdentity) {
  Rng rng(1);
  auto m = CascadeModel<double>::build(tiny(2), 1);
  zero_weights(m);
  const auto x = oracle::random_tensor(rng, {2, 2, 6, 5}, false);
  ad::Graph<double> g(false);
  for (auto mode : {ad::NormMode::kEval, ad::NormMode::kTrain, {}}) {
    const auto y = subnet_forward(g, m, 2, x, mode);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  }
  EXPECT_THROW(subnet_forward(g, m, 3, x, ad::NormMode::kEval), std::out_of_range);
}

TEST(SubnetForward, PreservesShape) {
  Rng rng(2);
  auto m = CascadeModel<double>::build(CascadeConfig::desk(), 2);
  ad::Graph<double> g(false);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{9, 7}, {16, 16}, {3, 12}}) {
    const auto x = oracle::random_tensor(rng, {1, 2, h, w}, false);
    EXPECT_EQ(subnet_forward(g, m, 1, x, ad::NormMode::kEval).shape(), x.shape());
  }
}

TEST(SubnetForward, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int n = 0; n < 20; ++n) {
    auto m = CascadeModel<double>::build(tiny(1), 100 + n);
    auto x = oracle::random_tensor(rng, {2, 2, 5, 5});
    const auto t = oracle::random_tensor(rng, {2, 2, 5, 5}, false);
    auto leaves = m.parameters();
    leaves.push_back(x);
    const double err = oracle::gradient_check(
        [&](oracle::Graph& g) { return ad::mse_loss(g, subnet_forward(g, m, 1, x, ad::NormMode::kTrain), t); },
        leaves);
    EXPECT_LT(err, 1e-6) << "instance " << n;
  }
}

TEST(Forward, AllDroppedReturnsZeroFilled) {
  Rng rng(4);
  auto m = CascadeModel<double>::build(tiny(4), 3);
  const auto a = acquire(rng, 8, 8, 3.0, 5);
  ad::Graph<double> g(false);
  ForwardOptions opts{DropMode::kFixed, ad::NormMode::kEval, std::vector<bool>(4, true)};
  const auto out = forward(g, m, images_to_tensor<double>(std::span(&a.xu, 1)), std::span(&a.y, 1),
                           std::span(&a.mask, 1), opts);
  const auto img = tensor_to_images(out.output).front();
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(img.data[i], a.xu.data[i], 1e-12);
  EXPECT_THROW(forward(g, m, out.output, std::span(&a.y, 1), std::span(&a.mask, 1),
                       ForwardOptions{DropMode::kFixed, ad::NormMode::kEval, {true}}),
               std::invalid_argument);
}

TEST(Forward, SingleZeroCascadeIsDcOfInput) {
  Rng rng(5);
  auto m = CascadeModel<double>::build(tiny(1), 3);
  zero_weights(m);
  const auto a = acquire(rng, 8, 8, 2.0, 6);
  const auto out = reconstruct(m, a.y, a.mask);
  for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(out.data[i], a.xu.data[i], 1e-12);
}

TEST(Forward, HardDcReproducesAcquiredSamples) {
  Rng rng(6);
  const auto a = acquire(rng, 16, 16, 3.0, 7);
  auto md = CascadeModel<double>::build(CascadeConfig::desk(), 9);
  EXPECT_LT(acquired_error(reconstruct(md, a.y, a.mask), a), 1e-12);
  auto mf = CascadeModel<float>::build(CascadeConfig::desk(), 9);
  EXPECT_LT(acquired_error(reconstruct(mf, a.y, a.mask), a), 1e-6);
  Rng drops(1);
  ad::Graph<double> g(false);
  for (int k = 0; k < 5; ++k) {
    const auto out = forward(g, md, images_to_tensor<double>(std::span(&a.xu, 1)), std::span(&a.y, 1),
                             std::span(&a.mask, 1), ForwardOptions{DropMode::kStochastic, ad::NormMode::kEval, {}}, &drops);
    EXPECT_LT(acquired_error(tensor_to_images(out.output).front(), a), 1e-12);
  }
}

TEST(Forward, StochasticNeedsGenerator) {
  Rng rng(7);
  auto m = CascadeModel<double>::build(tiny(2), 3);
  const auto a = acquire(rng, 8, 8, 2.0, 1);
  ad::Graph<double> g(false);
  EXPECT_THROW(forward(g, m, images_to_tensor<double>(std::span(&a.xu, 1)), std::span(&a.y, 1),
                       std::span(&a.mask, 1), ForwardOptions{DropMode::kStochastic, ad::NormMode::kEval, {}}),
               std::invalid_argument);
}

TEST(Forward, DropFrequenciesMatchSchedule) {
  Rng rng(8);
  auto cfg = CascadeConfig::undilated(15, 1);
  cfg.layers_per_subnet = 1;
  cfg.dilations = {1};
  auto m = CascadeModel<double>::build(cfg, 1);
  const auto a = acquire(rng, 4, 4, 2.0, 1);
  const auto x = images_to_tensor<double>(std::span(&a.xu, 1));
  Rng drops(2024);
  std::vector<int> count(15, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    ad::Graph<double> g(false);
    const auto res =
        forward(g, m, x, std::span(&a.y, 1), std::span(&a.mask, 1), ForwardOptions{DropMode::kStochastic, ad::NormMode::kEval, {}}, &drops);
    for (std::size_t i = 0; i < 15; ++i) count[i] += res.dropped[i] ? 1 : 0;
  }
  EXPECT_EQ(count[0], 0);
  for (std::size_t i = 1; i <= 15; ++i) {
    EXPECT_NEAR(count[i - 1] / double(trials), drop_probability(i, 15), 0.02) << "subnetwork " << i;
  }
}

TEST(Forward, EndToEndGradientMatchesFiniteDifferences) {
  Rng rng(9);
  int checked = 0;
  for (int n = 0; checked < 20; ++n) {
    auto cfg = tiny(2, 2);
    cfg.dc = n % 2 ? DCParams::hard() : DCParams::soft(2.0);
    auto m = CascadeModel<double>::build(cfg, 40 + n);
    std::vector<Acquisition> acq{acquire(rng, 6, 6, 2.0, n), acquire(rng, 6, 6, 2.0, n + 100)};
    std::vector<ComplexImage> xu{acq[0].xu, acq[1].xu}, gt{acq[0].gt, acq[1].gt};
    std::vector<KSpaceData> ys{acq[0].y, acq[1].y};
    std::vector<SamplingMask> masks{acq[0].mask, acq[1].mask};
    const auto x = images_to_tensor<double>(xu);
    const auto target = images_to_tensor<double>(gt);
    // Skip instances with an activation input inside the difference stencil.
    if (oracle::min_activation_margin(m, x, ys, masks) < 1e-4) continue;
    ++checked;
    const double err = oracle::gradient_check(
        [&](oracle::Graph& g) {
          const auto out = forward(g, m, x, ys, masks, ForwardOptions{DropMode::kDeterministic, ad::NormMode::kTrain, {}});
          return ad::mse_loss(g, out.output, target);
        },
        m.parameters());
    EXPECT_LT(err, 1e-6) << "instance " << n;
  }
}

TEST(Reconstruct, BitIdenticalAcrossRuns) {
  Rng rng(10);
  const auto a = acquire(rng, 16, 16, 4.0, 3);
  auto m1 = CascadeModel<float>::build(CascadeConfig::desk(), 5);
  auto m2 = CascadeModel<float>::build(CascadeConfig::desk(), 5);
  EXPECT_EQ(reconstruct(m1, a.y, a.mask), reconstruct(m2, a.y, a.mask));
  EXPECT_EQ(reconstruct(m1, a.y, a.mask), reconstruct(m1, a.y, a.mask));
}

TEST(Ensemble, NoDropsGiveZeroSpread) {
  Rng rng(11);
  const auto a = acquire(rng, 8, 8, 2.0, 2);
  auto m = CascadeModel<double>::build(tiny(1), 5);
  const auto res = reconstruct_ensemble(m, a.y, a.mask, 8, 3);
  EXPECT_EQ(res.samples, 8u);
  for (double s : res.std_magnitude) EXPECT_EQ(s, 0.0);
  const auto single = reconstruct(m, a.y, a.mask).magnitude();
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(res.mean_magnitude[i], single[i], 1e-12);
}

TEST(Ensemble, IdentitySubnetsReturnZeroFilled) {
  Rng rng(12);
  const auto a = acquire(rng, 8, 8, 3.0, 2);
  auto m = CascadeModel<double>::build(tiny(5), 5);
  zero_weights(m);
  const auto res = reconstruct_ensemble(m, a.y, a.mask, 16, 4);
  const auto mag = a.xu.magnitude();
  for (std::size_t i = 0; i < mag.size(); ++i) {
    EXPECT_NEAR(res.mean_magnitude[i], mag[i], 1e-12);
    EXPECT_NEAR(res.std_magnitude[i], 0.0, 1e-12);
  }
  for (std::size_t i = 0; i < a.xu.data.size(); ++i) EXPECT_NEAR(res.mean.data[i], a.xu.data[i], 1e-12);
}

TEST(Ensemble, SpreadIsNonNegativeAndSeeded) {
  Rng rng(13);
  const auto a = acquire(rng, 12, 12, 3.0, 2);
  auto m = CascadeModel<double>::build(tiny(6), 5);
  const auto r1 = reconstruct_ensemble(m, a.y, a.mask, 6, 9);
  const auto r2 = reconstruct_ensemble(m, a.y, a.mask, 6, 9);
  EXPECT_EQ(r1.std_magnitude, r2.std_magnitude);
  double total = 0.0;
  for (double s : r1.std_magnitude) {
    EXPECT_GE(s, 0.0);
    total += s;
  }
  EXPECT_GT(total, 0.0);
}

TEST(Ensemble, RejectsBadArguments) {
  Rng rng(14);
  const auto a = acquire(rng, 8, 8, 2.0, 2);
  auto m = CascadeModel<double>::build(tiny(2), 5);
  EXPECT_THROW(reconstruct_ensemble(m, a.y, a.mask, 1, 0), std::invalid_argument);
  auto cfg = tiny(2);
  cfg.stochastic = false;
  auto det = CascadeModel<double>::build(cfg, 5);
  EXPECT_THROW(reconstruct_ensemble(det, a.y, a.mask, 4, 0), std::invalid_argument);
}

TEST(Model, CloneIsIndependentAndAssignCopiesValues) {
  auto a = CascadeModel<double>::build(tiny(2), 1);
  auto b = a.clone();
  a.parameters()[0].data()[0] += 1.0;
  EXPECT_NE(a.parameters()[0].data()[0], b.parameters()[0].data()[0]);
  const auto handle = b.parameters()[0];
  b.assign_from(a);
  EXPECT_TRUE(handle.same(b.parameters()[0]));
  EXPECT_EQ(a.parameters()[0].data()[0], b.parameters()[0].data()[0]);
}
