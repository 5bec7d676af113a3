#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccnn/adam.hpp"
#include "dccnn/cascade.hpp"
#include "dccnn/errors.hpp"
#include "dccnn/kspace.hpp"
#include "dccnn/metrics.hpp"
#include "dccnn/ops.hpp"
#include "dccnn/phantom.hpp"
#include "dccnn/random.hpp"
#include "dccnn/sampling.hpp"

namespace dccnn {

/// Two-phase schedule: epochs [0, split_epoch) draw a fresh UF uniformly
/// from [uf_lo, uf_hi] per sample at the base rate; later epochs fine-tune at
/// finetune_uf with lr = base * lr_decay^floor((epoch - split) / decay_period).
struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t split_epoch = 0;
  double uf_lo = 1.0;
  double uf_hi = 12.0;
  double finetune_uf = 3.0;
  std::size_t batch_size = 4;
  double learning_rate = 1e-4;
  double lr_decay = 0.1;
  std::size_t decay_period = 20;
  std::uint64_t seed = 0;
  bool stochastic = false;
  /// Training images drawn per subject per epoch.
  std::size_t images_per_subject = 4;
  /// Fixed validation images per validation subject.
  std::size_t val_images_per_subject = 4;
  double sigma_fraction = 0.25;
  std::size_t center_lines = 1;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (split_epoch > epochs) throw std::invalid_argument("TrainConfig: split epoch beyond total epochs");
    if (!(uf_lo >= 1.0) || !(uf_hi >= uf_lo)) throw std::invalid_argument("TrainConfig: need 1 <= uf_lo <= uf_hi");
    if (!(finetune_uf >= 1.0)) throw std::invalid_argument("TrainConfig: finetune_uf must be >= 1");
    if (batch_size == 0 || images_per_subject == 0) throw std::invalid_argument("TrainConfig: empty batches");
    if (decay_period == 0) throw std::invalid_argument("TrainConfig: decay_period must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: negative learning rate");
  }

  double lr_at(std::size_t epoch) const {
    if (epoch < split_epoch) return learning_rate;
    const auto steps = static_cast<double>((epoch - split_epoch) / decay_period);
    return learning_rate * std::pow(lr_decay, steps);
  }
  bool curriculum(std::size_t epoch) const { return epoch < split_epoch; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double lr = 0.0;
  /// Times each subnetwork was skipped this epoch (stochastic mode only).
  std::vector<std::size_t> drop_counts;
  std::size_t forwards = 0;
  std::size_t mask_lines_min = 0;
  std::size_t mask_lines_max = 0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  double zero_filled_psnr = 0.0;
  double initial_val_psnr = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
};

/// Held-out images with frozen masks, one mask per validation subject.
struct ValidationSet {
  std::vector<ComplexImage> gt;
  std::vector<KSpaceData> y;
  std::vector<SamplingMask> masks;
};

inline ValidationSet make_validation_set(std::span<const Subject> subjects, double uf, std::size_t images_per_subject,
                                         std::uint64_t seed, double sigma_fraction = 0.25,
                                         std::size_t center_lines = 1) {
  ValidationSet vs;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const auto& imgs = subjects[s].stack.images;
    if (imgs.empty()) continue;
    const auto mask = generate_mask({imgs.front().ny, uf, sigma_fraction, center_lines, mix_seed(seed, 0xFA11, s)});
    const std::size_t k = std::min(images_per_subject, imgs.size());
    for (std::size_t j = 0; j < k; ++j) {
      const auto& img = imgs[j * imgs.size() / k];
      vs.gt.push_back(img);
      vs.y.push_back(undersample(img, mask));
      vs.masks.push_back(mask);
    }
  }
  return vs;
}

/// Mean magnitude PSNR of deterministic reconstructions (all subnetworks,
/// running BN statistics).
template <class T>
double validate(CascadeModel<T>& model, const ValidationSet& vs) {
  if (vs.gt.empty()) throw std::invalid_argument("validate: empty validation set");
  double acc = 0.0;
  for (std::size_t i = 0; i < vs.gt.size(); ++i) {
    const auto rec = reconstruct(model, vs.y[i], vs.masks[i]);
    acc += psnr(rec.magnitude(), vs.gt[i].magnitude());
  }
  return acc / static_cast<double>(vs.gt.size());
}

inline double zero_filled_psnr(const ValidationSet& vs) {
  if (vs.gt.empty()) throw std::invalid_argument("zero_filled_psnr: empty validation set");
  double acc = 0.0;
  for (std::size_t i = 0; i < vs.gt.size(); ++i) {
    acc += psnr(zero_filled(vs.y[i], vs.masks[i]).magnitude(), vs.gt[i].magnitude());
  }
  return acc / static_cast<double>(vs.gt.size());
}

template <class T>
struct TrainResult {
  TrainLog log;
  CascadeModel<T> best;
};

template <class T>
using EpochCallback = std::function<void(const CascadeModel<T>&, const EpochRecord&)>;

/// Supervised training with per-sample random masks, MSE on both channels
/// and Adam. `model` holds the final-epoch weights afterwards; the result
/// carries the best-validation copy. Deterministic for a fixed config.seed.
template <class T>
TrainResult<T> train(CascadeModel<T>& model, std::span<const Subject> train_set, std::span<const Subject> val_set,
                     const TrainConfig& config, const EpochCallback<T>& on_epoch = {}) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: empty training or validation set");
  for (const auto& a : train_set)
    for (const auto& b : val_set)
      if (a.name == b.name) throw std::invalid_argument("train: subject " + a.name + " is in both splits");

  const auto vs = make_validation_set(val_set, config.finetune_uf, config.val_images_per_subject, config.seed,
                                      config.sigma_fraction, config.center_lines);
  TrainResult<T> result;
  result.log.zero_filled_psnr = zero_filled_psnr(vs);
  result.log.initial_val_psnr = validate(model, vs);

  auto params = model.parameters();
  ad::AdamState<T> adam{std::span<const ad::Tensor<T>>(params)};
  Rng sample_rng(mix_seed(config.seed, 0x5A3));
  Rng uf_rng(mix_seed(config.seed, 0x0F));
  Rng drop_rng(mix_seed(config.seed, 0xD7));
  const std::size_t n = model.n_cascades();
  std::uint64_t mask_counter = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = config.lr_at(epoch);
    rec.drop_counts.assign(config.stochastic ? n : 0, 0);
    rec.mask_lines_min = std::numeric_limits<std::size_t>::max();

    // (subject, image) pairs for this epoch.
    std::vector<std::pair<std::size_t, std::size_t>> samples;
    for (std::size_t s = 0; s < train_set.size(); ++s) {
      const std::size_t count = train_set[s].stack.images.size();
      std::vector<std::size_t> idx(count);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      shuffle(idx.begin(), idx.end(), sample_rng);
      for (std::size_t j = 0; j < std::min(config.images_per_subject, count); ++j) samples.emplace_back(s, idx[j]);
    }
    shuffle(samples.begin(), samples.end(), sample_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += config.batch_size) {
      const std::size_t stop = std::min(samples.size(), start + config.batch_size);
      std::vector<ComplexImage> gt, xu;
      std::vector<KSpaceData> ys;
      std::vector<SamplingMask> masks;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& img = train_set[samples[k].first].stack.images[samples[k].second];
        const double uf = config.curriculum(epoch)
                              ? config.uf_lo + (config.uf_hi - config.uf_lo) * uniform01(uf_rng)
                              : config.finetune_uf;
        auto mask = generate_mask({img.ny, std::min(uf, static_cast<double>(img.ny)), config.sigma_fraction,
                                   config.center_lines, mix_seed(config.seed, 0x3A5C, mask_counter++)});
        rec.mask_lines_min = std::min(rec.mask_lines_min, mask.sampled_count());
        rec.mask_lines_max = std::max(rec.mask_lines_max, mask.sampled_count());
        auto y = undersample(img, mask);
        xu.push_back(zero_filled(y, mask));
        ys.push_back(std::move(y));
        masks.push_back(std::move(mask));
        gt.push_back(img);
      }

      ad::Graph<T> g;
      const auto x = images_to_tensor<T>(xu);
      const auto target = images_to_tensor<T>(gt);
      const ForwardOptions opts{config.stochastic ? DropMode::kStochastic : DropMode::kDeterministic,
                                ad::NormMode::kTrain, {}};
      auto out = forward(g, model, x, ys, masks, opts, &drop_rng);
      ++rec.forwards;
      for (std::size_t i = 0; i < rec.drop_counts.size(); ++i) rec.drop_counts[i] += out.dropped[i] ? 1 : 0;
      auto loss = ad::mse_loss(g, out.output, target);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      model.zero_grad();
      g.backward(loss);
      ad::adam_step<T>(params, adam, rec.lr);
      loss_sum += lv;
      ++batches;
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_psnr = validate(model, vs);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.val_psnr > result.log.best_val_psnr) {
      result.log.best_val_psnr = rec.val_psnr;
      result.log.best_epoch = epoch;
      result.best = model.clone();
    }
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(model, rec);
  }
  return result;
}

}  // namespace dccnn
