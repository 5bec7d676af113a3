// Trains a small stochastic cascade on 32x32 phantoms, then compares the
// zero-filled and network reconstructions of a held-out image and reports
// the spread of a Monte-Carlo ensemble.
//
//   toy_reconstruction [epochs]

#include <algorithm>
#include <cstdio>
#include <cstdlib>

#include "dccnn/training.hpp"

using namespace dccnn;

int main(int argc, char** argv) {
  const std::size_t epochs = argc > 1 ? static_cast<std::size_t>(std::atoi(argv[1])) : 10;

  DatasetSpec ds;
  ds.n_train = 8;
  ds.n_val = 2;
  ds.n_test = 1;
  ds.base.nx = ds.base.ny = 32;
  ds.base.cx = ds.base.cy = 16;
  ds.base.noise_sigma = 0.01;
  ds.r_endo = {5, 7};
  ds.thickness = {3, 5};
  ds.center_jitter = 1.5;
  const auto data = make_dataset(ds, DiffusionProtocol::standard(1000.0, 6, 1), 1);

  auto config = CascadeConfig::desk();
  config.hidden_channels = 8;
  config.stochastic = true;
  auto model = CascadeModel<float>::build(config, 2);

  TrainConfig tc;
  tc.epochs = epochs;
  tc.learning_rate = 1e-3;
  tc.finetune_uf = 3.0;
  tc.stochastic = true;
  auto result = train<float>(model, data.train, data.val, tc, [](const CascadeModel<float>&, const EpochRecord& r) {
    std::printf("epoch %2zu  loss %.5f  val %.2f dB\n", r.epoch, r.train_loss, r.val_psnr);
  });
  std::printf("zero-filled validation PSNR %.2f dB, best %.2f dB\n", result.log.zero_filled_psnr,
              result.log.best_val_psnr);

  const auto& test = data.test.front();
  const auto& gt = test.stack.images.front();
  const auto mask = generate_mask({gt.ny, 3.0, 0.25, 1, 42});
  const auto y = undersample(gt, mask);
  const auto zf = zero_filled(y, mask);
  const auto rec = reconstruct(result.best, y, mask);
  std::printf("test image at %.2fx: zero-filled %.2f dB, cascade %.2f dB\n", effective_uf(mask),
              psnr(zf.magnitude(), gt.magnitude()), psnr(rec.magnitude(), gt.magnitude()));

  const auto ens = reconstruct_ensemble(result.best, y, mask, 16, 7);
  double inside = 0.0, outside = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < ens.std_magnitude.size(); ++i) {
    if (test.stack.truth.myocardium[i]) {
      inside += ens.std_magnitude[i];
      ++n_in;
    } else {
      outside += ens.std_magnitude[i];
      ++n_out;
    }
  }
  std::printf("ensemble K=16: mean std %.2e in myocardium, %.2e elsewhere; max %.2e\n", inside / n_in,
              outside / n_out, *std::max_element(ens.std_magnitude.begin(), ens.std_magnitude.end()));
  return 0;
}
