// dccnn: phantom generation, mask generation, training, reconstruction,
// tensor fitting and evaluation from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dccnn/io.hpp"

namespace fs = std::filesystem;
using namespace dccnn;
using io::json;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  std::size_t subjects = 28;
  std::size_t val = 4;
  std::size_t test = 4;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  double noise = 0.01;
  double b = 1000.0;
  std::size_t directions = 12;
  std::size_t averages = 1;
};

void cmd_phantom(const PhantomArgs& a) {
  if (a.val + a.test >= a.subjects) throw std::invalid_argument("--subjects must exceed --val + --test");
  DatasetSpec ds;
  ds.n_train = a.subjects - a.val - a.test;
  ds.n_val = a.val;
  ds.n_test = a.test;
  ds.base.nx = ds.base.ny = a.size;
  ds.base.cx = ds.base.cy = static_cast<double>(a.size / 2);
  ds.base.noise_sigma = a.noise;
  // Geometry ranges scale with the grid; the defaults are tuned for 64x64.
  const double s = static_cast<double>(a.size) / 64.0;
  ds.center_jitter *= s;
  ds.r_endo = {ds.r_endo[0] * s, ds.r_endo[1] * s};
  ds.thickness = {ds.thickness[0] * s, ds.thickness[1] * s};
  const auto protocol = DiffusionProtocol::standard(a.b, a.directions, a.averages);
  const auto data = make_dataset(ds, protocol, a.seed);

  fs::create_directories(a.out);
  json manifest{{"seed", a.seed}, {"protocol", io::protocol_to_json(protocol)}};
  const auto emit = [&](const std::vector<Subject>& split, const char* key) {
    json names = json::array();
    for (const auto& subj : split) {
      const std::string file = subj.name + ".csdt";
      io::write_subject((fs::path(a.out) / file).string(), subj);
      names.push_back(file);
    }
    manifest[key] = names;
  };
  emit(data.train, "train");
  emit(data.val, "val");
  emit(data.test, "test");
  io::write_json((fs::path(a.out) / "dataset.json").string(), manifest);
  std::printf("wrote %zu subjects (%zu train, %zu val, %zu test) to %s\n", a.subjects, ds.n_train, ds.n_val,
              ds.n_test, a.out.c_str());
}

// ---------------------------------------------------------------- mask

struct MaskArgs {
  std::size_t ny = 0;
  double uf = 1.0;
  std::uint64_t seed = 0;
  double sigma_fraction = 0.25;
  std::size_t center_lines = 1;
  std::string out;
};

void cmd_mask(const MaskArgs& a) {
  const MaskSpec spec{a.ny, a.uf, a.sigma_fraction, a.center_lines, a.seed};
  const auto mask = generate_mask(spec);
  io::write_json(a.out, io::mask_to_json(mask, spec));
  std::printf("%zu of %zu lines, effective uf %.4f\n", mask.sampled_count(), mask.ny(), effective_uf(mask));
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
};

std::vector<Subject> load_split(const json& manifest, const fs::path& root, const char* key) {
  std::vector<Subject> out;
  for (const auto& name : io::field_or<std::vector<std::string>>(manifest, key, {})) {
    out.push_back(io::read_subject((root / name).string()));
  }
  return out;
}

template <class T>
void run_training(const json& cfg, const TrainArgs& a) {
  const auto model_cfg = io::config_from_json(io::field_or<json>(cfg, "model", json::object()));
  const auto train_json = io::field_or<json>(cfg, "train", json::object());
  auto train_cfg = io::train_config_from_json(train_json);
  if (!train_json.contains("stochastic")) train_cfg.stochastic = model_cfg.stochastic;
  if (train_cfg.stochastic && !model_cfg.stochastic) throw DataError("stochastic training needs a stochastic model");
  const auto init_seed = io::field_or<std::uint64_t>(cfg, "init_seed", 0);

  const auto manifest = io::read_json(a.data);
  const auto root = fs::path(a.data).parent_path();
  const auto train_set = load_split(manifest, root, "train");
  const auto val_set = load_split(manifest, root, "val");
  if (train_set.empty() || val_set.empty()) throw DataError(a.data + ": needs non-empty train and val splits");

  CascadeModel<T> model;
  if (cfg.contains("resume")) {
    const auto resume = (fs::path(a.config).parent_path() / io::field<std::string>(cfg, "resume")).string();
    model = io::load_model<T>(resume);
    if (model.config().n_cascades != model_cfg.n_cascades || model.config().dilations != model_cfg.dilations) {
      throw DataError(resume + ": checkpoint architecture differs from the config");
    }
  } else {
    model = CascadeModel<T>::build(model_cfg, init_seed);
  }

  const auto log_path = fs::path(a.out).replace_extension(".log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path);
  const auto res = train<T>(model, train_set, val_set, train_cfg, [&](const CascadeModel<T>&, const EpochRecord& r) {
    // Wall time goes to stderr so that the log itself is reproducible.
    auto j = io::epoch_to_json(r);
    j.erase("wall_seconds");
    log << j.dump() << '\n';
    std::fprintf(stderr, "epoch %zu  loss %.6g  val %.3f dB  (%.1f s)\n", r.epoch, r.train_loss, r.val_psnr,
                 r.wall_seconds);
  });
  io::save_model(a.out, res.best);
  json summary{{"zero_filled_psnr", res.log.zero_filled_psnr},
               {"initial_val_psnr", res.log.initial_val_psnr},
               {"best_val_psnr", res.log.best_val_psnr},
               {"best_epoch", res.log.best_epoch},
               {"final_val_psnr", res.log.epochs.back().val_psnr}};
  log << json{{"summary", summary}}.dump() << '\n';
  std::printf("best val %.3f dB at epoch %zu (zero-filled %.3f dB)\n", res.log.best_val_psnr, res.log.best_epoch,
              res.log.zero_filled_psnr);
}

void cmd_train(const TrainArgs& a) {
  const auto cfg = io::read_json(a.config);
  const auto precision = io::field_or<std::string>(cfg, "precision", "f64");
  if (precision == "f32") {
    run_training<float>(cfg, a);
  } else if (precision == "f64") {
    run_training<double>(cfg, a);
  } else {
    throw DataError("precision must be \"f32\" or \"f64\"");
  }
}

// ---------------------------------------------------------------- recon / ensemble

struct ReconArgs {
  std::string checkpoint;
  std::string input;
  std::string mask;
  std::string out;
  bool zero_filled = false;
  std::size_t samples = 16;
  std::uint64_t seed = 0;
};

struct Acquisition {
  json sidecar;
  std::vector<ComplexImage> images;
  SamplingMask mask;
};

Acquisition acquire(const ReconArgs& a) {
  Acquisition acq;
  acq.sidecar = io::read_json(io::sidecar_path(a.input));
  acq.images = io::get_images(ArrayContainer::read(a.input), "dwi");
  acq.mask = io::mask_from_json(io::read_json(a.mask));
  if (acq.mask.ny() != acq.images.front().ny) {
    throw DataError(a.mask + ": mask has " + std::to_string(acq.mask.ny()) + " lines, images have " +
                    std::to_string(acq.images.front().ny));
  }
  return acq;
}

void write_recon(const ReconArgs& a, const Acquisition& acq, const std::vector<ComplexImage>& images,
                 const std::string& method, ArrayContainer extra = {}) {
  io::add_images(extra, "dwi", images);
  extra.write(a.out);
  json side = acq.sidecar;
  side["reconstruction"] = {{"method", method}, {"mask_lines", acq.mask.indices()}};
  io::write_json(io::sidecar_path(a.out), side);
}

template <class T>
void run_recon(const ReconArgs& a, const Acquisition& acq) {
  auto model = io::load_model<T>(a.checkpoint);
  std::vector<ComplexImage> out;
  for (const auto& img : acq.images) out.push_back(reconstruct(model, undersample(img, acq.mask), acq.mask));
  write_recon(a, acq, out, "cascade");
}

void cmd_recon(const ReconArgs& a) {
  const auto acq = acquire(a);
  if (a.zero_filled) {
    std::vector<ComplexImage> out;
    for (const auto& img : acq.images) out.push_back(zero_filled(undersample(img, acq.mask), acq.mask));
    write_recon(a, acq, out, "zero_filled");
  } else if (a.checkpoint.empty()) {
    throw std::invalid_argument("recon needs --checkpoint or --zero-filled");
  } else if (io::checkpoint_precision(a.checkpoint) == "f32") {
    run_recon<float>(a, acq);
  } else {
    run_recon<double>(a, acq);
  }
  std::printf("reconstructed %zu images\n", acq.images.size());
}

template <class T>
void run_ensemble(const ReconArgs& a, const Acquisition& acq) {
  auto model = io::load_model<T>(a.checkpoint);
  std::vector<ComplexImage> means;
  std::vector<double> stds, mags;
  for (std::size_t k = 0; k < acq.images.size(); ++k) {
    const auto res = reconstruct_ensemble(model, undersample(acq.images[k], acq.mask), acq.mask, a.samples,
                                          mix_seed(a.seed, k));
    means.push_back(res.mean);
    stds.insert(stds.end(), res.std_magnitude.begin(), res.std_magnitude.end());
    mags.insert(mags.end(), res.mean_magnitude.begin(), res.mean_magnitude.end());
  }
  const auto& f = acq.images.front();
  ArrayContainer extra;
  extra.add("std", {acq.images.size(), f.ny, f.nx}, std::move(stds));
  extra.add("mean_magnitude", {acq.images.size(), f.ny, f.nx}, std::move(mags));
  write_recon(a, acq, means, "ensemble", std::move(extra));
}

void cmd_ensemble(const ReconArgs& a) {
  const auto acq = acquire(a);
  if (io::checkpoint_precision(a.checkpoint) == "f32") {
    run_ensemble<float>(a, acq);
  } else {
    run_ensemble<double>(a, acq);
  }
  std::printf("ensemble of %zu over %zu images\n", a.samples, acq.images.size());
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string dwi;
  std::string out;
  bool pgm = false;
};

struct Fitted {
  DiffusionTensorField field;
  TensorMetrics metrics;
  std::vector<std::uint8_t> myocardium, interior;
};

// Fits a DWI container. With a phantom spec in the sidecar the fit is
// restricted to the myocardium and HA uses the spec's LV centre; otherwise
// every pixel is fitted and the image centre is used.
Fitted fit_file(const std::string& path) {
  const auto side = io::read_json(io::sidecar_path(path));
  const auto images = io::get_images(ArrayContainer::read(path), "dwi");
  const auto protocol = io::protocol_from_json(io::field<json>(side, "protocol"));
  Fitted f;
  double cx = static_cast<double>(images.front().nx / 2), cy = static_cast<double>(images.front().ny / 2);
  if (side.contains("spec")) {
    const auto spec = io::spec_from_json(side.at("spec"));
    const auto truth = make_tensor_field(spec);
    f.myocardium = truth.myocardium;
    f.interior = truth.interior;
    cx = spec.cx;
    cy = spec.cy;
  }
  f.field = fit_tensor(images, protocol, f.myocardium);
  f.metrics = compute_metrics(f.field, cx, cy);
  return f;
}

void write_pgm(const std::string& path, std::span<const double> v, std::size_t nx, std::size_t ny) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << nx << ' ' << ny << "\n255\n";
  for (double x : v) {
    const double t = span > 0.0 ? (x - *lo) / span : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
  }
  io::write_json(fs::path(path).replace_extension(".window.json").string(), {{"min", *lo}, {"max", *hi}});
}

void cmd_fit(const FitArgs& a) {
  const auto f = fit_file(a.dwi);
  const auto nx = f.field.nx, ny = f.field.ny;
  ArrayContainer c;
  io::add_tensors(c, "tensor", f.field);
  io::add_map(c, "fa", nx, ny, f.metrics.fa);
  io::add_map(c, "md", nx, ny, f.metrics.md);
  io::add_map(c, "ha", nx, ny, f.metrics.ha);
  std::vector<double> status(f.field.status.size());
  for (std::size_t i = 0; i < status.size(); ++i) status[i] = static_cast<double>(f.field.status[i]);
  io::add_map(c, "status", nx, ny, status);
  c.write(a.out);
  if (a.pgm) {
    const auto stem = fs::path(a.out).replace_extension("").string();
    write_pgm(stem + "_fa.pgm", f.metrics.fa, nx, ny);
    write_pgm(stem + "_md.pgm", f.metrics.md, nx, ny);
    write_pgm(stem + "_ha.pgm", f.metrics.ha, nx, ny);
  }
  std::size_t fitted = 0;
  for (std::size_t i = 0; i < status.size(); ++i) fitted += f.field.fitted(i) ? 1 : 0;
  std::printf("fitted %zu of %zu pixels\n", fitted, status.size());
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> recon;
  std::vector<std::string> gt;
  std::string mask;
  std::string report;
  std::string label = "model";
};

SubjectMetrics evaluate_pair(const std::string& recon_path, const std::string& gt_path) {
  const auto rec = io::get_images(ArrayContainer::read(recon_path), "dwi");
  const auto gt = io::get_images(ArrayContainer::read(gt_path), "dwi");
  if (rec.size() != gt.size()) throw DataError(recon_path + ": image count differs from " + gt_path);
  SubjectMetrics m;
  m.name = io::field_or<std::string>(io::read_json(io::sidecar_path(gt_path)), "name",
                                     fs::path(gt_path).stem().string());
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (rec[k].nx != gt[k].nx || rec[k].ny != gt[k].ny) throw DataError(recon_path + ": image size differs");
    m.psnr += psnr(rec[k].magnitude(), gt[k].magnitude()) / static_cast<double>(gt.size());
  }
  const auto gt_side = io::read_json(io::sidecar_path(gt_path));
  if (gt_side.contains("spec")) {
    const auto fr = fit_file(recon_path);
    const auto fg = fit_file(gt_path);
    std::vector<double> md_r(fr.metrics.md), md_g(fg.metrics.md);
    for (auto& x : md_r) x *= 1e3;
    for (auto& x : md_g) x *= 1e3;
    m.fa_rmse = rmse_masked(fr.metrics.fa, fg.metrics.fa, fg.interior);
    m.md_rmse = rmse_masked(md_r, md_g, fg.interior);
    m.ha_rmse = ha_rmse(fr.metrics.ha, fg.metrics.ha, fg.interior);
  }
  return m;
}

void cmd_eval(const EvalArgs& a) {
  if (a.recon.size() != a.gt.size()) throw std::invalid_argument("--recon and --gt must be given in pairs");
  const auto mask_json = io::read_json(a.mask);
  const auto mask = io::mask_from_json(mask_json);
  char uf[32];
  std::snprintf(uf, sizeof(uf), "%gx", io::field_or<double>(mask_json, "uf", effective_uf(mask)));
  EvalReport report{a.label, uf, {}};
  for (std::size_t i = 0; i < a.recon.size(); ++i) report.subjects.push_back(evaluate_pair(a.recon[i], a.gt[i]));
  io::write_json(a.report + ".json", io::report_to_json(report));
  const auto table = report.table();
  std::ofstream txt(a.report + ".txt", std::ios::trunc);
  if (!txt) throw DataError("cannot write " + a.report + ".txt");
  txt << table;
  std::fputs(table.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded CNN reconstruction of undersampled diffusion MRI"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a phantom DWI dataset");
  phantom->add_option("--subjects", pa.subjects, "Total number of subjects")->check(CLI::PositiveNumber);
  phantom->add_option("--val", pa.val, "Validation subjects");
  phantom->add_option("--test", pa.test, "Test subjects");
  phantom->add_option("--out", pa.out, "Output directory")->required();
  phantom->add_option("--seed", pa.seed, "Dataset seed");
  phantom->add_option("--size", pa.size, "Image size (square)")->check(CLI::Range(16, 1024));
  phantom->add_option("--noise", pa.noise, "Noise std as a fraction of S0")->check(CLI::NonNegativeNumber);
  phantom->add_option("--b", pa.b, "b-value of the diffusion-weighted images")->check(CLI::PositiveNumber);
  phantom->add_option("--directions", pa.directions, "Gradient directions")->check(CLI::Range(6, 512));
  phantom->add_option("--averages", pa.averages, "Averages per image")->check(CLI::Range(1, 64));

  MaskArgs ma;
  auto* mask = app.add_subcommand("mask", "Generate an undersampling mask");
  mask->add_option("--ny", ma.ny, "Phase-encode lines")->required()->check(CLI::PositiveNumber);
  mask->add_option("--uf", ma.uf, "Undersampling factor")->required();
  mask->add_option("--seed", ma.seed, "Mask seed");
  mask->add_option("--sigma-fraction", ma.sigma_fraction, "Gaussian std as a fraction of ny");
  mask->add_option("--center-lines", ma.center_lines, "Always-acquired centre lines");
  mask->add_option("--out", ma.out, "Output mask JSON")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a cascade on a phantom dataset");
  trn->add_option("--config", ta.config, "Training config JSON")->required();
  trn->add_option("--data", ta.data, "dataset.json written by 'phantom'")->required();
  trn->add_option("--out", ta.out, "Checkpoint path (.csdt)")->required();

  ReconArgs ra;
  auto* recon = app.add_subcommand("recon", "Reconstruct undersampled images");
  recon->add_option("--checkpoint", ra.checkpoint, "Model checkpoint");
  recon->add_option("--input", ra.input, "Fully sampled DWI container")->required();
  recon->add_option("--mask", ra.mask, "Mask JSON")->required();
  recon->add_option("--out", ra.out, "Output container")->required();
  recon->add_flag("--zero-filled", ra.zero_filled, "Write the zero-filled baseline instead");

  ReconArgs ea;
  auto* ensemble = app.add_subcommand("ensemble", "Monte-Carlo ensemble reconstruction with uncertainty");
  ensemble->add_option("--checkpoint", ea.checkpoint, "Stochastic model checkpoint")->required();
  ensemble->add_option("--input", ea.input, "Fully sampled DWI container")->required();
  ensemble->add_option("--mask", ea.mask, "Mask JSON")->required();
  ensemble->add_option("-K,--samples", ea.samples, "Ensemble size")->check(CLI::Range(2, 100000));
  ensemble->add_option("--seed", ea.seed, "Ensemble seed");
  ensemble->add_option("--out", ea.out, "Output container")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit diffusion tensors and derive FA/MD/HA maps");
  fit->add_option("--dwi", fa.dwi, "DWI container")->required();
  fit->add_option("--out", fa.out, "Output container")->required();
  fit->add_flag("--pgm", fa.pgm, "Also write 8-bit PGM previews");

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Score reconstructions against ground truth");
  eval->add_option("--recon", va.recon, "Reconstruction container (repeatable)")->required();
  eval->add_option("--gt", va.gt, "Ground-truth container (repeatable)")->required();
  eval->add_option("--mask", va.mask, "Mask JSON used for the reconstructions")->required();
  eval->add_option("--report", va.report, "Report path without extension")->required();
  eval->add_option("--label", va.label, "Model label for the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*phantom) cmd_phantom(pa);
    if (*mask) cmd_mask(ma);
    if (*trn) cmd_train(ta);
    if (*recon) cmd_recon(ra);
    if (*ensemble) cmd_ensemble(ea);
    if (*fit) cmd_fit(fa);
    if (*eval) cmd_eval(va);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "dccnn: numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "dccnn: %s\n", e.what());
    return kData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "dccnn: %s\n", e.what());
    return kData;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "dccnn: malformed JSON: %s\n", e.what());
    return kData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "dccnn: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dccnn: %s\n", e.what());
    return kData;
  }
  return 0;
}
