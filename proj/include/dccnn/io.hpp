#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "dccnn/cascade.hpp"
#include "dccnn/container.hpp"
#include "dccnn/errors.hpp"
#include "dccnn/metrics.hpp"
#include "dccnn/phantom.hpp"
#include "dccnn/sampling.hpp"
#include "dccnn/training.hpp"

namespace dccnn::io {

using json = nlohmann::json;

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

/// Sidecar path next to a container: same stem, .json extension.
inline std::string sidecar_path(const std::string& container_path) {
  return std::filesystem::path(container_path).replace_extension(".json").string();
}

// Field access with a data error naming the missing key.
template <class V>
V field(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw DataError(std::string("field '") + key + "': " + e.what());
  }
}

template <class V>
V field_or(const json& j, const char* key, V fallback) {
  return j.contains(key) ? field<V>(j, key) : fallback;
}

// ---------------------------------------------------------------- masks

/// Mask file: the explicit sorted line list is authoritative; ny, uf, seed
/// and the generator settings are metadata.
inline json mask_to_json(const SamplingMask& mask, const MaskSpec& spec) {
  return json{{"ny", mask.ny()},
              {"uf", spec.uf},
              {"seed", spec.seed},
              {"sigma_fraction", spec.sigma_fraction},
              {"center_lines", spec.center_lines},
              {"effective_uf", effective_uf(mask)},
              {"lines", mask.indices()}};
}

inline SamplingMask mask_from_json(const json& j) {
  const auto ny = field<std::size_t>(j, "ny");
  const auto lines = field<std::vector<std::size_t>>(j, "lines");
  if (lines.empty()) throw DataError("mask file lists no sampled lines");
  return SamplingMask::from_indices(ny, lines);
}

// ---------------------------------------------------------------- protocol / phantom

inline json protocol_to_json(const DiffusionProtocol& p) {
  json entries = json::array();
  for (const auto& e : p.entries) entries.push_back({{"b", e.b}, {"g", e.g}});
  return {{"averages", p.averages}, {"entries", entries}};
}

inline DiffusionProtocol protocol_from_json(const json& j) {
  DiffusionProtocol p;
  p.averages = field<std::size_t>(j, "averages");
  for (const auto& e : field<json>(j, "entries")) {
    p.entries.push_back({field<double>(e, "b"), field<Vec3>(e, "g")});
  }
  return p;
}

inline json spec_to_json(const PhantomSpec& s) {
  return {{"nx", s.nx},           {"ny", s.ny},           {"cx", s.cx},
          {"cy", s.cy},           {"r_endo", s.r_endo},   {"r_epi", s.r_epi},
          {"ha_endo", s.ha_endo}, {"ha_epi", s.ha_epi},   {"eigenvalues", s.eigenvalues},
          {"s0", s.s0},           {"background", s.background}, {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

inline PhantomSpec spec_from_json(const json& j) {
  PhantomSpec s;
  s.nx = field<std::size_t>(j, "nx");
  s.ny = field<std::size_t>(j, "ny");
  s.cx = field<double>(j, "cx");
  s.cy = field<double>(j, "cy");
  s.r_endo = field<double>(j, "r_endo");
  s.r_epi = field<double>(j, "r_epi");
  s.ha_endo = field<double>(j, "ha_endo");
  s.ha_epi = field<double>(j, "ha_epi");
  s.eigenvalues = field<std::array<double, 3>>(j, "eigenvalues");
  s.s0 = field<double>(j, "s0");
  s.background = field<double>(j, "background");
  s.noise_sigma = field<double>(j, "noise_sigma");
  s.seed = field<std::uint64_t>(j, "seed");
  return s;
}

// ---------------------------------------------------------------- image stacks

inline void add_images(ArrayContainer& c, const std::string& name, std::span<const ComplexImage> images) {
  if (images.empty()) throw DataError("no images to store in '" + name + "'");
  const auto& f = images.front();
  std::vector<double> v;
  v.reserve(images.size() * f.data.size());
  for (const auto& img : images) {
    if (img.nx != f.nx || img.ny != f.ny) throw ShapeError("add_images: mixed image sizes");
    v.insert(v.end(), img.data.begin(), img.data.end());
  }
  c.add(name, {images.size(), 2, f.ny, f.nx}, std::move(v));
}

inline std::vector<ComplexImage> get_images(const ArrayContainer& c, const std::string& name) {
  const auto& ext = c.extents(name);
  if (ext.size() != 4 || ext[1] != 2) throw DataError("entry '" + name + "' is not an image stack [n,2,ny,nx]");
  const auto v = c.get(name);
  std::vector<ComplexImage> out;
  const std::size_t plane = 2 * ext[2] * ext[3];
  for (std::size_t k = 0; k < ext[0]; ++k) {
    ComplexImage img(ext[3], ext[2]);
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(k * plane),
              v.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane), img.data.begin());
    out.push_back(std::move(img));
  }
  return out;
}

inline void add_map(ArrayContainer& c, const std::string& name, std::size_t nx, std::size_t ny,
                    std::span<const double> values) {
  c.add(name, {ny, nx}, std::vector<double>(values.begin(), values.end()));
}

inline void add_mask(ArrayContainer& c, const std::string& name, std::size_t nx, std::size_t ny,
                     std::span<const std::uint8_t> mask) {
  c.add(name, {ny, nx}, std::vector<double>(mask.begin(), mask.end()));
}

inline std::vector<std::uint8_t> get_mask(const ArrayContainer& c, const std::string& name) {
  const auto v = c.get(name);
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] != 0.0 ? 1 : 0;
  return out;
}

inline void add_tensors(ArrayContainer& c, const std::string& name, const DiffusionTensorField& f) {
  const std::size_t np = f.nx * f.ny;
  std::vector<double> v(7 * np);
  for (std::size_t i = 0; i < np; ++i) {
    const auto comp = f.tensors[i].components();
    for (std::size_t k = 0; k < 6; ++k) v[k * np + i] = comp[k];
    v[6 * np + i] = f.s0[i];
  }
  c.add(name, {7, f.ny, f.nx}, std::move(v));
}

/// Subject file: "dwi" stack plus ground-truth maps; the sidecar carries the
/// protocol and the phantom spec.
inline void write_subject(const std::string& path, const Subject& s) {
  ArrayContainer c;
  const auto& st = s.stack;
  const auto nx = st.spec.nx, ny = st.spec.ny;
  add_images(c, "dwi", st.images);
  add_tensors(c, "tensor_true", st.truth.field);
  add_map(c, "fa_true", nx, ny, st.truth.fa);
  add_map(c, "md_true", nx, ny, st.truth.md);
  add_map(c, "ha_true", nx, ny, st.truth.ha);
  add_mask(c, "myocardium", nx, ny, st.truth.myocardium);
  add_mask(c, "interior", nx, ny, st.truth.interior);
  c.write(path);
  write_json(sidecar_path(path), {{"name", s.name}, {"protocol", protocol_to_json(st.protocol)},
                                  {"spec", spec_to_json(st.spec)}});
}

/// Reads a subject file; the ground truth is regenerated from the spec.
inline Subject read_subject(const std::string& path) {
  const auto c = ArrayContainer::read(path);
  const auto side = read_json(sidecar_path(path));
  Subject s;
  s.name = field<std::string>(side, "name");
  s.stack.spec = spec_from_json(field<json>(side, "spec"));
  s.stack.protocol = protocol_from_json(field<json>(side, "protocol"));
  s.stack.images = get_images(c, "dwi");
  s.stack.truth = make_tensor_field(s.stack.spec);
  if (s.stack.images.size() != s.stack.protocol.images()) {
    throw DataError(path + ": image count does not match the protocol");
  }
  return s;
}

// ---------------------------------------------------------------- model checkpoints

inline json config_to_json(const CascadeConfig& c) {
  json dc = c.dc.is_hard() ? json("hard") : json(*c.dc.lambda0);
  return {{"n_cascades", c.n_cascades}, {"layers_per_subnet", c.layers_per_subnet},
          {"hidden_channels", c.hidden_channels}, {"dilations", c.dilations},
          {"stochastic", c.stochastic}, {"batch_norm", c.batch_norm},
          {"dc", dc}, {"leaky_alpha", c.leaky_alpha}};
}

inline CascadeConfig config_from_json(const json& j) {
  CascadeConfig c;
  c.n_cascades = field_or<std::size_t>(j, "n_cascades", c.n_cascades);
  c.layers_per_subnet = field_or<std::size_t>(j, "layers_per_subnet", c.layers_per_subnet);
  c.hidden_channels = field_or<std::size_t>(j, "hidden_channels", c.hidden_channels);
  c.dilations = field_or<std::vector<std::size_t>>(j, "dilations", c.dilations);
  c.stochastic = field_or<bool>(j, "stochastic", c.stochastic);
  c.batch_norm = field_or<bool>(j, "batch_norm", c.batch_norm);
  c.leaky_alpha = field_or<double>(j, "leaky_alpha", c.leaky_alpha);
  if (j.contains("dc")) {
    const auto& dc = j.at("dc");
    if (dc.is_string()) {
      if (dc.get<std::string>() != "hard") throw DataError("dc must be \"hard\" or a number");
      c.dc = DCParams::hard();
    } else {
      c.dc = DCParams::soft(dc.get<double>());
    }
  }
  c.validate();
  return c;
}

template <class T>
constexpr const char* precision_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
void save_model(const std::string& path, const CascadeModel<T>& model) {
  ArrayContainer c;
  const auto put = [&c](const std::string& name, const ad::Shape& shape, std::span<const T> v) {
    c.add(name, std::vector<std::uint64_t>(shape.begin(), shape.end()), std::vector<T>(v.begin(), v.end()));
  };
  for (std::size_t s = 1; s <= model.n_cascades(); ++s) {
    const auto& net = model.subnet(s);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& layer = net.layers[l];
      const std::string p = "subnet" + std::to_string(s) + ".layer" + std::to_string(l + 1) + ".";
      put(p + "weight", layer.weight.shape(), layer.weight.data());
      put(p + "bias", layer.bias.shape(), layer.bias.data());
      if (layer.gamma) {
        put(p + "gamma", layer.gamma->shape(), layer.gamma->data());
        put(p + "beta", layer.beta->shape(), layer.beta->data());
        const auto& st = layer.bn_state;
        put(p + "running_mean", {st.running_mean.size()}, st.running_mean);
        put(p + "running_var", {st.running_var.size()}, st.running_var);
      }
    }
  }
  c.write(path);
  auto side = config_to_json(model.config());
  side["precision"] = precision_name<T>();
  write_json(sidecar_path(path), side);
}

template <class T>
CascadeModel<T> load_model(const std::string& path) {
  const auto side = read_json(sidecar_path(path));
  const auto config = config_from_json(side);
  const auto c = ArrayContainer::read(path);
  auto model = CascadeModel<T>::build(config, 0);
  const auto take = [&c](const std::string& name, std::span<T> dst) {
    const auto v = c.get(name);
    if (v.size() != dst.size()) throw DataError("checkpoint entry '" + name + "' has the wrong size");
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<T>(v[i]);
  };
  for (std::size_t s = 1; s <= model.n_cascades(); ++s) {
    auto& net = model.subnet(s);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& layer = net.layers[l];
      const std::string p = "subnet" + std::to_string(s) + ".layer" + std::to_string(l + 1) + ".";
      take(p + "weight", layer.weight.data());
      take(p + "bias", layer.bias.data());
      if (layer.gamma) {
        take(p + "gamma", layer.gamma->data());
        take(p + "beta", layer.beta->data());
        take(p + "running_mean", layer.bn_state.running_mean);
        take(p + "running_var", layer.bn_state.running_var);
      }
    }
  }
  return model;
}

inline std::string checkpoint_precision(const std::string& path) {
  return field_or<std::string>(read_json(sidecar_path(path)), "precision", "f64");
}

// ---------------------------------------------------------------- training

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.epochs = field_or(j, "epochs", t.epochs);
  t.split_epoch = field_or(j, "split_epoch", t.split_epoch);
  t.uf_lo = field_or(j, "uf_lo", t.uf_lo);
  t.uf_hi = field_or(j, "uf_hi", t.uf_hi);
  t.finetune_uf = field_or(j, "finetune_uf", t.finetune_uf);
  t.batch_size = field_or(j, "batch_size", t.batch_size);
  t.learning_rate = field_or(j, "learning_rate", t.learning_rate);
  t.lr_decay = field_or(j, "lr_decay", t.lr_decay);
  t.decay_period = field_or(j, "decay_period", t.decay_period);
  t.seed = field_or(j, "seed", t.seed);
  t.stochastic = field_or(j, "stochastic", t.stochastic);
  t.images_per_subject = field_or(j, "images_per_subject", t.images_per_subject);
  t.val_images_per_subject = field_or(j, "val_images_per_subject", t.val_images_per_subject);
  t.sigma_fraction = field_or(j, "sigma_fraction", t.sigma_fraction);
  t.center_lines = field_or(j, "center_lines", t.center_lines);
  t.validate();
  return t;
}

inline json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_psnr", r.val_psnr},
          {"lr", r.lr},
          {"drop_counts", r.drop_counts},
          {"forwards", r.forwards},
          {"mask_lines_min", r.mask_lines_min},
          {"mask_lines_max", r.mask_lines_max},
          {"wall_seconds", r.wall_seconds}};
}

// ---------------------------------------------------------------- reports

inline json report_to_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& s : r.subjects) {
    json row{{"name", s.name}, {"psnr", s.psnr}};
    if (s.fa_rmse) row["fa_rmse"] = *s.fa_rmse;
    if (s.md_rmse) row["md_rmse"] = *s.md_rmse;
    if (s.ha_rmse) row["ha_rmse"] = *s.ha_rmse;
    rows.push_back(row);
  }
  const auto ms = [](MeanStd m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  json agg{{"psnr", ms(r.aggregate_psnr())}};
  if (r.has_tensor_metrics()) {
    agg["fa_rmse"] = ms(r.aggregate(&SubjectMetrics::fa_rmse));
    agg["md_rmse"] = ms(r.aggregate(&SubjectMetrics::md_rmse));
    agg["ha_rmse"] = ms(r.aggregate(&SubjectMetrics::ha_rmse));
  }
  return {{"model", r.model_label}, {"uf", r.uf_label}, {"subjects", rows}, {"aggregate", agg}};
}

}  // namespace dccnn::io
