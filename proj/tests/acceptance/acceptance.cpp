// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 7-9 train two toy models (about ten minutes on one core).

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dccnn/io.hpp"
#include "oracles.hpp"

using namespace dccnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1. hard DC

template <class T>
double hard_dc_error(std::size_t instances) {
  Rng rng(101);
  double worst = 0.0;
  for (std::size_t n = 0; n < instances; ++n) {
    auto cfg = CascadeConfig::desk();
    cfg.stochastic = true;
    auto model = CascadeModel<T>::build(cfg, 500 + n);
    // Arbitrary model state: perturbed weights and BN statistics.
    for (auto p : model.parameters())
      for (auto& v : p.data()) v += static_cast<T>(0.1 * standard_normal(rng));
    for (std::size_t s = 1; s <= model.n_cascades(); ++s) {
      for (auto& layer : model.subnet(s).layers) {
        for (auto& m : layer.bn_state.running_mean) m = static_cast<T>(standard_normal(rng));
        for (auto& v : layer.bn_state.running_var) v = static_cast<T>(0.5 + uniform01(rng));
      }
    }
    const std::size_t nx = 16 + 8 * (n % 3), ny = 16 + 8 * ((n + 1) % 3);
    const auto gt = oracle::random_image(rng, nx, ny);
    const auto mask = generate_mask({ny, 2.0 + static_cast<double>(n % 7), 0.25, 1, n});
    const auto y = undersample(gt, mask);
    const auto xu = zero_filled(y, mask);
    const auto x = images_to_tensor<T>(std::span(&xu, 1));
    for (auto mode : {DropMode::kDeterministic, DropMode::kStochastic}) {
      ad::Graph<T> g(false);
      Rng drops(n);
      const auto out = forward(g, model, x, std::span(&y, 1), std::span(&mask, 1),
                               ForwardOptions{mode, ad::NormMode::kEval, {}}, &drops);
      const auto k = fft2c(tensor_to_images(out.output).front());
      double err = 0.0, scale = 0.0;
      for (std::size_t r = 0; r < ny; ++r) {
        if (!mask.sampled(r)) continue;
        for (std::size_t c = 0; c < nx; ++c) {
          err = std::max(err, std::abs(k(r, c) - y(r, c)));
          scale = std::max(scale, std::abs(y(r, c)));
        }
      }
      worst = std::max(worst, err / scale);
    }
  }
  return worst;
}

Outcome criterion_hard_dc() {
  const double e64 = hard_dc_error<double>(20);
  const double e32 = hard_dc_error<float>(20);
  return {e64 <= 1e-12 && e32 <= 1e-6,
          fmt("max relative k-space error on acquired lines: f64 %.2e (tol 1e-12), f32 %.2e (tol 1e-6), 20 models "
              "x 2 drop modes each",
              e64, e32)};
}

// ---------------------------------------------------------------- 2. DC closed form

Outcome criterion_dc_closed_form() {
  Rng rng(202);
  double worst = 0.0;
  const std::size_t instances = 20;
  for (std::size_t n = 0; n < instances; ++n) {
    const auto z = oracle::random_image(rng, 16, 16);
    std::vector<bool> lines(16);
    for (std::size_t i = 0; i < 16; ++i) lines[i] = bernoulli(rng, 0.35);
    const SamplingMask mask(lines);
    const auto y = undersample(oracle::random_image(rng, 16, 16), mask);
    for (auto lambda : {std::optional<double>(0.0), std::optional<double>(1.0), std::optional<double>(10.0),
                        std::optional<double>()}) {
      const auto got = data_consistency(z, y, mask, lambda ? DCParams::soft(*lambda) : DCParams::hard());
      const auto ref = oracle::brute_force_dc(z, y, mask, lambda);
      for (std::size_t i = 0; i < got.data.size(); ++i) worst = std::max(worst, std::abs(got.data[i] - ref.data[i]));
    }
  }
  return {worst <= 1e-12, fmt("max |closed form - brute force| = %.2e over %zu 16x16 instances x "
                              "lambda0 in {0, 1, 10, hard} (tol 1e-12)",
                              worst, instances)};
}

// ---------------------------------------------------------------- 3. gradients

using oracle::Graph;
using Tensor = oracle::Tensor;

Tensor probe(Graph& g, const Tensor& x, const Tensor& w) { return ad::sum(g, ad::mul(g, x, w)); }

Tensor away_from_zero(Rng& rng, ad::Shape shape) {
  auto t = oracle::random_tensor(rng, std::move(shape));
  for (auto& v : t.data()) v += v >= 0 ? 0.05 : -0.05;
  return t;
}

CascadeConfig tiny(std::size_t n_cascades) {
  auto c = CascadeConfig::undilated(n_cascades, 2);
  c.layers_per_subnet = 3;
  c.dilations = {1, 2, 1};
  return c;
}

Outcome criterion_gradients() {
  constexpr int kN = 20;
  constexpr double kKinkMargin = 1e-4;
  Rng rng(303);
  std::vector<std::pair<std::string, double>> worst;
  const auto run = [&](const std::string& name, const std::function<double(int)>& instance) {
    double w = 0.0;
    for (int n = 0; n < kN; ++n) w = std::max(w, instance(n));
    worst.emplace_back(name, w);
  };

  run("conv2d", [&](int n) {
    auto x = oracle::random_tensor(rng, {2, 2, 5, 6});
    auto w = oracle::random_tensor(rng, {3, 2, 3, 3});
    auto b = oracle::random_tensor(rng, {3});
    const auto r = oracle::random_tensor(rng, {2, 3, 5, 6}, false);
    const std::size_t d = 1 + static_cast<std::size_t>(n % 4);
    return oracle::gradient_check([&](Graph& g) { return probe(g, ad::conv2d(g, x, w, b, d), r); }, {x, w, b});
  });
  run("leaky_relu", [&](int) {
    auto x = away_from_zero(rng, {3, 7});
    const auto r = oracle::random_tensor(rng, {3, 7}, false);
    return oracle::gradient_check([&](Graph& g) { return probe(g, ad::leaky_relu(g, x, 0.01), r); }, {x});
  });
  for (auto mode : {ad::NormMode::kTrain, ad::NormMode::kEval}) {
    run(mode == ad::NormMode::kTrain ? "batch_norm(train)" : "batch_norm(eval)", [&](int) {
      auto x = oracle::random_tensor(rng, {2, 3, 3, 4});
      auto gamma = oracle::random_tensor(rng, {3});
      auto beta = oracle::random_tensor(rng, {3});
      const auto r = oracle::random_tensor(rng, {2, 3, 3, 4}, false);
      ad::BatchNormState<double> st(3);
      st.running_mean = {0.1, -0.2, 0.3};
      st.running_var = {0.5, 1.5, 2.0};
      return oracle::gradient_check(
          [&](Graph& g) { return probe(g, ad::batch_norm(g, x, gamma, beta, st, mode), r); }, {x, gamma, beta});
    });
  }
  run("add", [&](int) {
    auto a = oracle::random_tensor(rng, {4, 5});
    auto b = oracle::random_tensor(rng, {4, 5});
    const auto r = oracle::random_tensor(rng, {4, 5}, false);
    return oracle::gradient_check([&](Graph& g) { return probe(g, ad::add(g, a, b), r); }, {a, b});
  });
  run("mul", [&](int) {
    auto a = oracle::random_tensor(rng, {4, 5});
    auto b = oracle::random_tensor(rng, {4, 5});
    const auto r = oracle::random_tensor(rng, {4, 5}, false);
    return oracle::gradient_check([&](Graph& g) { return probe(g, ad::mul(g, a, b), r); }, {a, b});
  });
  run("sum", [&](int) {
    auto a = oracle::random_tensor(rng, {3, 4});
    return oracle::gradient_check([&](Graph& g) { return ad::sum(g, ad::mul(g, a, a)); }, {a});
  });
  run("mse_loss", [&](int) {
    auto p = oracle::random_tensor(rng, {3, 5});
    const auto t = oracle::random_tensor(rng, {3, 5}, false);
    return oracle::gradient_check([&](Graph& g) { return ad::mse_loss(g, p, t); }, {p});
  });
  run("dc_layer", [&](int n) {
    std::vector<ComplexImage> zs{oracle::random_image(rng, 6, 8), oracle::random_image(rng, 6, 8)};
    std::vector<SamplingMask> masks{generate_mask({8, 2.0, 0.25, 1, static_cast<std::uint64_t>(n)}),
                                    generate_mask({8, 3.0, 0.25, 1, static_cast<std::uint64_t>(n + 50)})};
    std::vector<KSpaceData> ys{undersample(oracle::random_image(rng, 6, 8), masks[0]),
                               undersample(oracle::random_image(rng, 6, 8), masks[1])};
    auto z = images_to_tensor<double>(zs, true);
    const auto r = oracle::random_tensor(rng, z.shape(), false);
    const auto params = n % 2 ? DCParams::hard() : DCParams::soft(0.5 * n);
    return oracle::gradient_check(
        [&](Graph& g) { return probe(g, dc_layer(g, z, ys, masks, params), r); }, {z});
  });
  std::size_t redrawn = 0;
  run("2-cascade model", [&](int n) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      auto cfg = tiny(2);
      cfg.dc = n % 2 ? DCParams::hard() : DCParams::soft(2.0);
      auto m = CascadeModel<double>::build(cfg, 40 + 1000 * attempt + static_cast<std::uint64_t>(n));
      std::vector<ComplexImage> gt{oracle::random_image(rng, 6, 6), oracle::random_image(rng, 6, 6)};
      std::vector<SamplingMask> masks{generate_mask({6, 2.0, 0.25, 1, static_cast<std::uint64_t>(n)}),
                                      generate_mask({6, 2.0, 0.25, 1, static_cast<std::uint64_t>(n + 100)})};
      std::vector<KSpaceData> ys{undersample(gt[0], masks[0]), undersample(gt[1], masks[1])};
      std::vector<ComplexImage> xu{zero_filled(ys[0], masks[0]), zero_filled(ys[1], masks[1])};
      const auto x = images_to_tensor<double>(xu);
      const auto target = images_to_tensor<double>(gt);
      if (oracle::min_activation_margin(m, x, ys, masks) < kKinkMargin) {
        ++redrawn;
        continue;
      }
      return oracle::gradient_check(
          [&](Graph& g) {
            const auto out = forward(g, m, x, ys, masks,
                                     ForwardOptions{DropMode::kDeterministic, ad::NormMode::kTrain, {}});
            return ad::mse_loss(g, out.output, target);
          },
          m.parameters());
    }
  });

  bool pass = true;
  std::string detail;
  for (const auto& [name, w] : worst) {
    pass = pass && w < 1e-6;
    detail += fmt("%s%s %.1e", detail.empty() ? "" : ", ", name.c_str(), w);
  }
  return {pass, "worst relative error (" + std::to_string(kN) + " instances each, h=1e-5, tol 1e-6): " + detail +
                   fmt("; %zu model instances redrawn for a leaky-ReLU input within %.0e of 0", redrawn,
                       kKinkMargin)};
}

// ---------------------------------------------------------------- 4. drop statistics

Outcome criterion_drop_statistics() {
  auto cfg = CascadeConfig::undilated(15, 1);
  cfg.layers_per_subnet = 1;
  cfg.dilations = {1};
  auto model = CascadeModel<double>::build(cfg, 1);
  Rng rng(404);
  const auto gt = oracle::random_image(rng, 4, 4);
  const auto mask = generate_mask({4, 2.0, 0.25, 1, 1});
  const auto y = undersample(gt, mask);
  const auto xu = zero_filled(y, mask);
  const auto x = images_to_tensor<double>(std::span(&xu, 1));
  Rng drops(4040);
  constexpr int kTrials = 10000;
  std::vector<int> count(15, 0);
  for (int t = 0; t < kTrials; ++t) {
    ad::Graph<double> g(false);
    const auto res = forward(g, model, x, std::span(&y, 1), std::span(&mask, 1),
                             ForwardOptions{DropMode::kStochastic, ad::NormMode::kEval, {}}, &drops);
    for (std::size_t i = 0; i < 15; ++i) count[i] += res.dropped[i] ? 1 : 0;
  }
  double worst = 0.0;
  for (std::size_t i = 1; i <= 15; ++i) {
    worst = std::max(worst, std::abs(count[i - 1] / double(kTrials) - static_cast<double>(i - 1) / 30.0));
  }
  return {count[0] == 0 && worst <= 0.02,
          fmt("10000 forwards, n_c=15: subnetwork 1 dropped %d times, max |freq - (i-1)/30| = %.4f (tol 0.02)",
              count[0], worst)};
}

// ---------------------------------------------------------------- 5. receptive field

Outcome criterion_receptive_field() {
  const auto a = receptive_field(std::vector<std::size_t>{1, 1, 1, 1, 1});
  const auto b = receptive_field(CascadeConfig{}.dilations);
  return {a == 11 && b == 23, fmt("[1]x5 -> %zu (want 11), default 6-layer schedule -> %zu (want 23)", a, b)};
}

// ---------------------------------------------------------------- 6. tensor fit

Outcome criterion_tensor_fit() {
  const PhantomSpec s;
  const auto stack = make_phantom(s, DiffusionProtocol::standard());
  const auto field = fit_tensor(stack.images, stack.protocol, stack.truth.myocardium);
  const auto m = compute_metrics(field, s.cx, s.cy);
  const auto& t = stack.truth;
  double d_err = 0.0, map_err = 0.0;
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < t.interior.size(); ++i) {
    if (!t.interior[i]) continue;
    ++pixels;
    const auto a = field.tensors[i].components(), b = t.field.tensors[i].components();
    for (int k = 0; k < 6; ++k) d_err = std::max(d_err, std::abs(a[k] - b[k]) / s.eigenvalues[0]);
    map_err = std::max({map_err, std::abs(m.fa[i] - t.fa[i]), std::abs(m.md[i] - t.md[i]),
                        std::abs(m.ha[i] - t.ha[i])});
  }
  // Mid-wall pixels on the four axes through the LV centre.
  const auto mid = static_cast<std::size_t>(std::lround((s.r_endo + s.r_epi) / 2.0));
  const auto cx = static_cast<std::size_t>(s.cx), cy = static_cast<std::size_t>(s.cy);
  double mid_err = 0.0;
  for (auto [x, y] : {std::pair{cx + mid, cy}, std::pair{cx - mid, cy}, std::pair{cx, cy + mid}, std::pair{cx, cy - mid}}) {
    mid_err = std::max(mid_err, std::abs(m.ha[y * s.nx + x]));
  }
  return {pixels > 0 && d_err <= 1e-9 && map_err <= 1e-6 && mid_err <= 1e-6,
          fmt("%zu interior pixels: max |D - D_true|/lambda1 %.1e (tol 1e-9), max FA/MD/HA error %.1e (tol 1e-6), "
              "mid-wall |HA| %.1e deg (tol 1e-6)",
              pixels, d_err, map_err, mid_err)};
}

// ---------------------------------------------------------------- 7-9. toy training

struct ToyRun {
  TrainLog log;
  CascadeModel<float> best;
  CascadeModel<float> last;
};

const Dataset& toy_data() {
  static const Dataset data = [] {
    DatasetSpec ds;
    ds.n_train = 20;
    ds.n_val = 4;
    ds.n_test = 0;
    ds.base.noise_sigma = 0.01;
    return make_dataset(ds, DiffusionProtocol::standard(), 7);
  }();
  return data;
}

TrainConfig toy_train_config(bool stochastic) {
  TrainConfig tc;
  tc.epochs = 30;
  tc.split_epoch = 0;
  tc.finetune_uf = 3.0;
  tc.learning_rate = 1e-4;
  tc.decay_period = 30;
  tc.seed = 5;
  tc.stochastic = stochastic;
  return tc;
}

const ToyRun& toy_run(bool stochastic) {
  static std::optional<ToyRun> runs[2];
  auto& slot = runs[stochastic ? 1 : 0];
  if (!slot) {
    auto cfg = CascadeConfig::desk();
    cfg.stochastic = stochastic;
    auto model = CascadeModel<float>::build(cfg, 11);
    const auto& data = toy_data();
    auto res = train<float>(model, data.train, data.val, toy_train_config(stochastic));
    slot = ToyRun{res.log, std::move(res.best), std::move(model)};
  }
  return *slot;
}

// Largest rise between consecutive 5-epoch mean training losses.
double worst_window_rise(const TrainLog& log) {
  std::vector<double> w;
  for (std::size_t e = 0; e + 5 <= log.epochs.size(); e += 5) {
    double s = 0.0;
    for (std::size_t k = e; k < e + 5; ++k) s += log.epochs[k].train_loss / 5.0;
    w.push_back(s);
  }
  double worst = 0.0;
  for (std::size_t i = 1; i < w.size(); ++i) worst = std::max(worst, w[i] / w[i - 1] - 1.0);
  return worst;
}

Outcome criterion_toy_training() {
  const auto& run = toy_run(false);
  const double final_psnr = run.log.epochs.back().val_psnr;
  const double gain = final_psnr - run.log.zero_filled_psnr;
  return {gain >= 3.0,
          fmt("held-out PSNR %.3f dB (final epoch) vs zero-filled %.3f dB: gain %.3f dB (need >= 3); untrained %.3f "
              "dB, best %.3f dB; worst 5-epoch loss window rise %+.1f%%",
              final_psnr, run.log.zero_filled_psnr, gain, run.log.initial_val_psnr, run.log.best_val_psnr,
              100.0 * worst_window_rise(run.log))};
}

Outcome criterion_parity() {
  const double det = toy_run(false).log.epochs.back().val_psnr;
  const auto& sto = toy_run(true);
  const double s = sto.log.epochs.back().val_psnr;
  return {std::abs(s - det) <= 1.0,
          fmt("final validation PSNR stochastic %.3f dB vs deterministic %.3f dB: |diff| %.3f dB (tol 1)", s, det,
              std::abs(s - det))};
}

Outcome criterion_uncertainty() {
  // All p_i = 0: a single-cascade stochastic model.
  auto one = CascadeConfig::desk();
  one.n_cascades = 1;
  one.stochastic = true;
  auto m0 = CascadeModel<float>::build(one, 3);
  const auto& subj = toy_data().val.front();
  const auto& gt = subj.stack.images.front();
  const auto mask = generate_mask({gt.ny, 3.0, 0.25, 1, 99});
  const auto y = undersample(gt, mask);
  const auto zero = reconstruct_ensemble(m0, y, mask, 16, 1);
  const bool all_zero = std::all_of(zero.std_magnitude.begin(), zero.std_magnitude.end(), [](double s) { return s == 0.0; });

  auto trained = toy_run(true).best.clone();
  const auto ens = reconstruct_ensemble(trained, y, mask, 16, 2);
  const auto& sd = ens.std_magnitude;
  const bool nonneg = std::all_of(sd.begin(), sd.end(), [](double s) { return s >= 0.0 && std::isfinite(s); });
  double inside = 0.0;
  for (std::size_t i = 0; i < sd.size(); ++i)
    if (subj.stack.truth.myocardium[i]) inside = std::max(inside, sd[i]);
  return {all_zero && nonneg && inside > 0.0,
          fmt("all p_i = 0: std identically 0 = %s; trained stochastic model, K=16: min std %.2e, max std in "
              "myocardium %.3e",
              all_zero ? "yes" : "no", *std::min_element(sd.begin(), sd.end()), inside)};
}

// ---------------------------------------------------------------- 10. masks

Outcome criterion_masks() {
  bool counts_ok = true;
  std::size_t checked = 0;
  for (std::size_t ny : {64, 128, 256}) {
    for (double uf : {2.0, 5.0, 8.0}) {
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto m = generate_mask({ny, uf, 0.25, 1, seed});
        counts_ok = counts_ok && m.sampled_count() == static_cast<std::size_t>(std::llround(ny / uf));
        ++checked;
      }
    }
  }
  // Per-line selection frequency in bins of |k| distance, centre block excluded.
  constexpr std::size_t kNy = 128, kBin = 8, kSeeds = 10000;
  std::vector<double> freq(kNy, 0.0);
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto m = generate_mask({kNy, 8.0, 0.25, 1, seed});
    for (std::size_t i = 0; i < kNy; ++i) freq[i] += m.sampled(i) ? 1.0 : 0.0;
  }
  std::vector<double> sum(kNy / 2 / kBin + 1, 0.0), lines(sum.size(), 0.0);
  for (std::size_t i = 0; i < kNy; ++i) {
    if (i == kNy / 2) continue;
    const auto dist = static_cast<std::size_t>(std::abs(static_cast<long>(i) - static_cast<long>(kNy / 2)));
    sum[dist / kBin] += freq[i] / kSeeds;
    lines[dist / kBin] += 1.0;
  }
  bool monotone = true;
  double prev = 1.0;
  for (std::size_t b = 0; b < sum.size(); ++b) {
    if (lines[b] == 0.0) continue;
    const double f = sum[b] / lines[b];
    monotone = monotone && f <= prev;
    prev = f;
  }
  return {counts_ok && monotone, fmt("%zu masks with exact round(ny/uf) counts for uf in {2,5,8}: %s; binned "
                                     "frequency over 10000 seeds (ny=128, uf=8) non-increasing: %s",
                                     checked, counts_ok ? "yes" : "no", monotone ? "yes" : "no")};
}

// ---------------------------------------------------------------- 11. CLI determinism

int cli(const std::string& args) {
  const std::string cmd = std::string(DCCNN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_cli_determinism() {
  const auto root = fs::temp_directory_path() / "dccnn_acceptance_cli";
  fs::remove_all(root);
  std::size_t compared = 0;
  std::string mismatch;
  for (const char* run : {"a", "b"}) {
    const auto d = root / run;
    fs::create_directories(d);
    const auto p = [&d](const std::string& n) { return (d / n).string(); };
    io::write_json(p("cfg.json"), {{"precision", "f32"},
                                   {"init_seed", 4},
                                   {"model", {{"n_cascades", 2}, {"hidden_channels", 4}, {"stochastic", true}}},
                                   {"train", {{"epochs", 2}, {"learning_rate", 1e-3}}}});
    const std::vector<std::string> cmds{
        "phantom --subjects 5 --val 1 --test 1 --size 32 --directions 6 --noise 0.02 --seed 8 --out " + p("data"),
        "mask --ny 32 --uf 3 --seed 2 --out " + p("mask.json"),
        "train --config " + p("cfg.json") + " --data " + p("data/dataset.json") + " --out " + p("model.csdt"),
        "recon --checkpoint " + p("model.csdt") + " --input " + p("data/subject_004.csdt") + " --mask " +
            p("mask.json") + " --out " + p("recon.csdt"),
        "recon --zero-filled --input " + p("data/subject_004.csdt") + " --mask " + p("mask.json") + " --out " +
            p("zf.csdt"),
        "ensemble --checkpoint " + p("model.csdt") + " --input " + p("data/subject_004.csdt") + " --mask " +
            p("mask.json") + " -K 4 --seed 1 --out " + p("ens.csdt"),
        "fit --pgm --dwi " + p("recon.csdt") + " --out " + p("fit.csdt"),
        "eval --recon " + p("recon.csdt") + " --gt " + p("data/subject_004.csdt") + " --mask " + p("mask.json") +
            " --report " + p("report"),
    };
    for (const auto& c : cmds) {
      if (const int rc = cli(c); rc != 0) return {false, fmt("command failed with exit %d: %s", rc, c.c_str())};
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++compared;
    if (slurp(e.path()) != slurp(root / "b" / rel)) mismatch += " " + rel.string();
  }
  fs::remove_all(root);
  return {mismatch.empty() && compared > 0,
          fmt("phantom, mask, train, recon, recon --zero-filled, ensemble, fit, eval run twice: %zu output files "
              "compared, mismatches:%s",
              compared, mismatch.empty() ? " none" : mismatch.c_str())};
}

}  // namespace

int main() {
  report(1, "Hard data consistency", criterion_hard_dc);
  report(2, "DC closed form vs brute force", criterion_dc_closed_form);
  report(3, "Gradient suite", criterion_gradients);
  report(4, "Stochastic depth statistics", criterion_drop_statistics);
  report(5, "Receptive field", criterion_receptive_field);
  report(6, "Tensor-fit round trip", criterion_tensor_fit);
  report(7, "Toy training efficacy", criterion_toy_training);
  report(8, "Stochastic vs deterministic parity", criterion_parity);
  report(9, "Uncertainty sanity", criterion_uncertainty);
  report(10, "Mask statistics", criterion_masks);
  report(11, "CLI determinism", criterion_cli_determinism);
  std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
