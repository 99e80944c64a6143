// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mfsr/imgproc.hpp"

namespace mfsr {

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

std::string join(const std::vector<double>& values) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + epoch + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor plane_crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  Tensor out(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(0, 0, i, j) = image.at(0, 0, y + i, x + j);
  return out;
}

Tensor rotate_ccw(const Tensor& in) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out(Shape{n, c, w, h});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j) out.at(b, ch, i, j) = in.at(b, ch, j, w - 1 - i);
  return out;
}

Tensor flip(const Tensor& in, bool horizontal) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out(in.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          out.at(b, ch, i, j) = horizontal ? in.at(b, ch, i, w - 1 - j) : in.at(b, ch, h - 1 - i, j);
  return out;
}

template <typename T>
BasicTensor<T> to_precision(const Tensor& t) {
  if constexpr (std::is_same_v<T, double>) {
    return t;
  } else {
    BasicTensor<T> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = T(t[i]);
    return out;
  }
}

Tensor to_double(const TensorF& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = double(t[i]);
  return out;
}

const Tensor& to_double(const Tensor& t) { return t; }

}  // namespace

// ---- config -------------------------------------------------------------------------

void TrainConfig::validate() const {
  net.validate();
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (lr_half_every == 0) throw ConfigError("train.lr_half_every must be positive");
  if (patch_lr == 0 || patch_hr != patch_lr * net.scale) {
    throw ConfigError("train.patch_hr (" + std::to_string(patch_hr) + ") must equal patch_lr (" +
                      std::to_string(patch_lr) + ") x scale (" + std::to_string(net.scale) + ")");
  }
  if (patches_per_image == 0) throw ConfigError("train.patches_per_image must be positive");
  if (precision != "f32" && precision != "f64") throw ConfigError("train.precision must be f32 or f64");
  if (augment_scaling && scales.empty()) throw ConfigError("train.scales is empty");
  for (double s : scales)
    if (!(s > 0.0 && s <= 4.0)) throw ConfigError("train.scales entries must lie in (0, 4]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

TrainConfig TrainConfig::from_config(const ConfigFile& cfg) {
  TrainConfig c;
  c.net = NetworkConfig::from_config(cfg.table("net"));
  const ConfigFile t = cfg.table("train");
  const auto count = [&](const char* key, std::size_t fallback) {
    const long long v = t.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string("train.") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.batch_size = count("batch_size", c.batch_size);
  c.lr0 = t.get_double("lr0", c.lr0);
  c.lr_half_every = count("lr_half_every", c.lr_half_every);
  c.epochs = count("epochs", c.epochs);
  c.patch_hr = count("patch_hr", c.patch_hr);
  c.patch_lr = count("patch_lr", c.patch_lr);
  c.patches_per_image = count("patches_per_image", c.patches_per_image);
  c.seed = static_cast<std::uint64_t>(count("seed", c.seed));
  c.precision = t.get_or("precision", c.precision);
  c.augment_rotation = t.get_bool("augment_rotation", c.augment_rotation);
  c.augment_flip = t.get_bool("augment_flip", c.augment_flip);
  c.augment_scaling = t.get_bool("augment_scaling", c.augment_scaling);
  if (t.has("scales")) c.scales = parse_list(t.get("scales"));
  c.adam_beta1 = t.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = t.get_double("adam_beta2", c.adam_beta2);
  c.adam_epsilon = t.get_double("adam_epsilon", c.adam_epsilon);
  c.eval_border = count("eval_border", c.eval_border);
  c.validate();
  return c;
}

ConfigFile TrainConfig::to_config() const {
  ConfigFile cfg;
  cfg.merge(net.to_config(), "net");
  ConfigFile t;
  t.set("batch_size", batch_size);
  t.set("lr0", lr0);
  t.set("lr_half_every", lr_half_every);
  t.set("epochs", epochs);
  t.set("patch_hr", patch_hr);
  t.set("patch_lr", patch_lr);
  t.set("patches_per_image", patches_per_image);
  t.set("seed", static_cast<long long>(seed));
  t.set("precision", precision);
  t.set("augment_rotation", augment_rotation);
  t.set("augment_flip", augment_flip);
  t.set("augment_scaling", augment_scaling);
  t.set("scales", join(scales));
  t.set("adam_beta1", adam_beta1);
  t.set("adam_beta2", adam_beta2);
  t.set("adam_epsilon", adam_epsilon);
  t.set("eval_border", eval_border);
  cfg.merge(t, "train");
  return cfg;
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  return config.lr0 * std::ldexp(1.0, -static_cast<int>(epoch / config.lr_half_every));
}

// ---- data -----------------------------------------------------------------------------

std::vector<ImagePair> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<ImagePair> out;
  for (const SampleRecord& r : manifest.split(split)) {
    ImagePair p;
    p.id = r.id;
    const Tensor visible = read_image(manifest.resolve(r.visible));
    p.visible_y = visible.dim(1) == 3 ? rgb_to_y(visible) : visible;
    p.thermal = read_image(manifest.resolve(r.thermal));
    if (p.thermal.dim(1) != 1) throw std::runtime_error(r.thermal + ": thermal image must have one channel");
    if (p.visible_y.shape() != p.thermal.shape()) {
      throw std::runtime_error("sample " + r.id + ": visible " + shape_str(p.visible_y.shape()) +
                               " and thermal " + shape_str(p.thermal.shape()) + " are not aligned");
    }
    if (!r.salient_mask.empty()) p.salient = read_image(manifest.resolve(r.salient_mask));
    out.push_back(std::move(p));
  }
  return out;
}

AugmentParams draw_augment(const TrainConfig& config, std::mt19937_64& rng) {
  AugmentParams a;
  if (config.augment_rotation) a.quarter_turns = int(std::uniform_int_distribution<int>(0, 3)(rng));
  if (config.augment_flip) {
    a.flip_horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    a.flip_vertical = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  }
  if (config.augment_scaling && !config.scales.empty()) {
    a.scale = config.scales[std::uniform_int_distribution<std::size_t>(0, config.scales.size() - 1)(rng)];
  }
  return a;
}

Tensor apply_augment(const Tensor& image, const AugmentParams& params, std::size_t multiple) {
  require_rank(image, 4, "apply_augment");
  Tensor out = image;
  if (params.scale != 1.0) {
    const auto extent = [&](std::size_t n) {
      const auto m = double(std::max<std::size_t>(multiple, 1));
      return std::max<std::size_t>(std::size_t(m), std::size_t(std::lround(double(n) * params.scale / m)) * std::size_t(m));
    };
    out = bicubic_resize(out, extent(out.dim(2)), extent(out.dim(3)));
  }
  if (params.flip_horizontal) out = flip(out, true);
  if (params.flip_vertical) out = flip(out, false);
  for (int i = 0; i < ((params.quarter_turns % 4) + 4) % 4; ++i) out = rotate_ccw(out);
  return out;
}

ImagePair augment(const ImagePair& pair, const TrainConfig& config, std::mt19937_64& rng) {
  const AugmentParams a = draw_augment(config, rng);
  if (a.is_identity()) return pair;
  ImagePair out;
  out.id = pair.id;
  out.visible_y = apply_augment(pair.visible_y, a, config.net.scale);
  out.thermal = apply_augment(pair.thermal, a, config.net.scale);
  return out;
}

namespace {

struct CropSource {
  ImagePair hr;
  Tensor lr;
};

bool fits(const ImagePair& pair, const TrainConfig& config) {
  return pair.thermal.dim(2) >= config.patch_hr && pair.thermal.dim(3) >= config.patch_hr;
}

CropSource prepare_source(ImagePair pair, const TrainConfig& config) {
  const std::size_t s = config.net.scale;
  CropSource src;
  src.lr = bicubic_resize(pair.thermal, pair.thermal.dim(2) / s, pair.thermal.dim(3) / s);
  src.hr = std::move(pair);
  return src;
}

PatchTriple crop_triple(const CropSource& src, const TrainConfig& config, std::size_t x, std::size_t y) {
  const std::size_t s = config.net.scale, hr = config.patch_hr, lr = config.patch_lr;
  PatchTriple t;
  t.lr_x = x;
  t.lr_y = y;
  t.thermal_lr = plane_crop(src.lr, y, x, lr, lr);
  t.thermal_hr = plane_crop(src.hr.thermal, y * s, x * s, hr, hr);
  t.visible_hr = plane_crop(src.hr.visible_y, y * s, x * s, hr, hr);
  return t;
}

std::pair<std::size_t, std::size_t> draw_position(const CropSource& src, const TrainConfig& config,
                                                  std::mt19937_64& rng) {
  const std::size_t max_x = src.lr.dim(3) - config.patch_lr, max_y = src.lr.dim(2) - config.patch_lr;
  const std::size_t x = std::uniform_int_distribution<std::size_t>(0, max_x)(rng);
  const std::size_t y = std::uniform_int_distribution<std::size_t>(0, max_y)(rng);
  return {x, y};
}

}  // namespace

std::vector<PatchTriple> make_training_pairs(const ImagePair& pair, const TrainConfig& config, std::size_t count,
                                             std::mt19937_64& rng) {
  if (!fits(pair, config)) {
    spdlog::warn("skipping {}: {}x{} is smaller than the {}x{} patch", pair.id, pair.thermal.dim(3),
                 pair.thermal.dim(2), config.patch_hr, config.patch_hr);
    return {};
  }
  const CropSource src = prepare_source(pair, config);
  std::vector<PatchTriple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [x, y] = draw_position(src, config, rng);
    out.push_back(crop_triple(src, config, x, y));
  }
  return out;
}

// ---- Adam -------------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(double(grads[i]))) {
      throw NonFiniteGradient("non-finite gradient at element " + std::to_string(i));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double b1 = hyper.beta1, b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = double(grads[i]);
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1, v_hat = state.v[i] / c2;
    params[i] = T(double(params[i]) - lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
  }
}

template <typename T>
void NetworkOptimizer<T>::step(NetworkParams<T>& params, double lr) {
  std::vector<std::pair<std::span<T>, std::span<const T>>> slots;
  for (auto& [name, layer] : params.layers()) {
    slots.emplace_back(layer.weight.data(), layer.grad_weight.data());
    if (!layer.bias.empty()) slots.emplace_back(layer.bias.data(), layer.grad_bias.data());
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (T g : slots[i].second)
      if (!std::isfinite(double(g))) {
        throw NonFiniteGradient("non-finite gradient in tensor " + std::to_string(i) + " at step " +
                                std::to_string(steps_ + 1));
      }
  }
  states_.resize(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) adam_step(slots[i].first, slots[i].second, states_[i], lr, hyper_);
  ++steps_;
}

// ---- evaluation ------------------------------------------------------------------------------

double EvalReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_db;
  return s / double(rows.size());
}

double EvalReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return s / double(rows.size());
}

void EvalReport::write_csv(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image_id,psnr_db,ssim,variant\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.image_id << ',' << r.psnr_db << ',' << r.ssim << ',' << r.variant << '\n';
}

template <typename T>
Tensor super_resolve(const NetworkConfig& config, NetworkParams<T>& params, const ImagePair& pair) {
  const std::size_t s = config.scale;
  if (pair.thermal.dim(2) % s != 0 || pair.thermal.dim(3) % s != 0) {
    throw ShapeError("image " + pair.id + " extents are not multiples of the scale factor");
  }
  const Tensor lr = bicubic_resize(pair.thermal, pair.thermal.dim(2) / s, pair.thermal.dim(3) / s);
  const BasicTensor<T> out =
      forward(to_precision<T>(pair.visible_y), to_precision<T>(lr), config, params, BnMode::kEval);
  return to_double(out);
}

template <typename T>
EvalReport evaluate(const NetworkConfig& config, NetworkParams<T>& params, const std::vector<ImagePair>& test,
                    std::size_t border) {
  EvalReport report;
  for (const ImagePair& pair : test) {
    const Tensor sr = super_resolve(config, params, pair);
    report.rows.push_back({pair.id, psnr(sr, pair.thermal, border), ssim(sr, pair.thermal, border),
                           to_string(config.variant)});
  }
  return report;
}

EvalReport evaluate_bicubic(const std::vector<ImagePair>& test, std::size_t scale, std::size_t border) {
  EvalReport report;
  for (const ImagePair& pair : test) {
    const std::size_t h = pair.thermal.dim(2), w = pair.thermal.dim(3);
    const Tensor up = bicubic_resize(bicubic_resize(pair.thermal, h / scale, w / scale), h, w);
    report.rows.push_back({pair.id, psnr(up, pair.thermal, border), ssim(up, pair.thermal, border), "bicubic"});
  }
  return report;
}

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const DatasetManifest& manifest, std::size_t border) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  const std::vector<ImagePair> test = load_split(manifest, Split::kTest);
  if (checkpoint_precision(checkpoint) == "f32") {
    auto ckpt = load_checkpoint<float>(checkpoint);
    return evaluate(ckpt.config, ckpt.params, test, border);
  }
  auto ckpt = load_checkpoint<double>(checkpoint);
  return evaluate(ckpt.config, ckpt.params, test, border);
}

// ---- training ----------------------------------------------------------------------------------

namespace {

struct CropRef {
  std::size_t source = 0, x = 0, y = 0;
};

template <typename T>
void fill_batch(BasicTensor<T>& dst, std::size_t index, const Tensor& src) {
  std::transform(src.storage().begin(), src.storage().end(), dst.ptr() + index * src.size(),
                 [](double v) { return T(v); });
}

template <typename T>
TrainResult train_impl(const TrainConfig& config, const DatasetManifest& manifest, const fs::path& out_dir) {
  const std::vector<ImagePair> train_set = load_split(manifest, Split::kTrain);
  const std::vector<ImagePair> test_set = load_split(manifest, Split::kTest);
  if (train_set.empty()) throw std::runtime_error("manifest has no training samples");
  fs::create_directories(out_dir);

  const NetworkConfig& net = config.net;
  NetworkParams<T> params(net);
  params.initialize(config.seed);
  NetworkOptimizer<T> optimizer({config.adam_beta1, config.adam_beta2, config.adam_epsilon});
  const std::size_t hr = config.patch_hr, lr_size = config.patch_lr;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    std::mt19937_64 rng(epoch_seed(config.seed, epoch));

    std::vector<CropSource> sources;
    std::vector<CropRef> crops;
    for (const ImagePair& pair : train_set) {
      ImagePair aug = augment(pair, config, rng);
      if (!fits(aug, config)) {
        spdlog::warn("skipping {} in epoch {}: {}x{} is smaller than the {}x{} patch", aug.id, epoch,
                     aug.thermal.dim(3), aug.thermal.dim(2), hr, hr);
        continue;
      }
      sources.push_back(prepare_source(std::move(aug), config));
      for (std::size_t k = 0; k < config.patches_per_image; ++k) {
        const auto [x, y] = draw_position(sources.back(), config, rng);
        crops.push_back({sources.size() - 1, x, y});
      }
    }
    if (crops.empty()) throw std::runtime_error("no training image is large enough for a patch");
    std::shuffle(crops.begin(), crops.end(), rng);

    double loss_sum = 0.0;
    std::size_t pixels = 0;
    for (std::size_t start = 0; start < crops.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, crops.size() - start);
      BasicTensor<T> v(Shape{b, 1, hr, hr}), t_lr(Shape{b, 1, lr_size, lr_size}), t_hr(Shape{b, 1, hr, hr});
      for (std::size_t i = 0; i < b; ++i) {
        const CropRef& c = crops[start + i];
        const PatchTriple p = crop_triple(sources[c.source], config, c.x, c.y);
        fill_batch(v, i, p.visible_hr);
        fill_batch(t_lr, i, p.thermal_lr);
        fill_batch(t_hr, i, p.thermal_hr);
      }
      params.zero_grad();
      ForwardCache<T> cache;
      const BasicTensor<T> out = forward(v, t_lr, net, params, BnMode::kTrain, &cache);
      loss_sum += l1_loss(out, t_hr);
      pixels += out.size();
      backward(cache, l1_loss_backward(out, t_hr), net, params);
      try {
        optimizer.step(params, lr);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient("epoch " + std::to_string(epoch) + ", batch starting at patch " +
                                std::to_string(start) + ": " + e.what());
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = lr;
    log.train_loss = loss_sum / double(pixels);
    log.test_psnr = test_set.empty() ? 0.0 : evaluate(net, params, test_set, config.eval_border).mean_psnr();
    spdlog::info("epoch {:3d}  lr {:.3g}  loss {:.6f}  test psnr {:.4f} dB", epoch, lr, log.train_loss,
                 log.test_psnr);
    result.epochs.push_back(log);
  }
  result.final_test_psnr = result.epochs.empty()
                               ? (test_set.empty() ? 0.0 : evaluate(net, params, test_set, config.eval_border).mean_psnr())
                               : result.epochs.back().test_psnr;

  ConfigFile meta = config.to_config();
  meta.set("result.final_test_psnr", exact(result.final_test_psnr));
  meta.set("result.dataset_hash", manifest.content_hash);
  meta.set("result.optimizer_steps", optimizer.steps());
  result.checkpoint = out_dir / "model.ckpt";
  save_checkpoint(result.checkpoint, net, params, meta);

  std::ofstream csv(out_dir / "train_log.csv");
  if (!csv) throw std::runtime_error("cannot write " + (out_dir / "train_log.csv").string());
  csv << "epoch,learning_rate,train_loss,test_psnr_db\n" << std::setprecision(17);
  for (const EpochLog& e : result.epochs)
    csv << e.epoch << ',' << e.learning_rate << ',' << e.train_loss << ',' << e.test_psnr << '\n';
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, const fs::path& out_dir) {
  config.validate();
  if (config.precision == "f64") return train_impl<double>(config, manifest, out_dir);
  return train_impl<float>(config, manifest, out_dir);
}

#define MFSR_INSTANTIATE_TRAINER(T)                                                                              \
  template void adam_step(std::span<T>, std::span<const T>, AdamState&, double, const AdamHyper&);              \
  template class NetworkOptimizer<T>;                                                                            \
  template EvalReport evaluate(const NetworkConfig&, NetworkParams<T>&, const std::vector<ImagePair>&,          \
                               std::size_t);                                                                     \
  template Tensor super_resolve(const NetworkConfig&, NetworkParams<T>&, const ImagePair&);

MFSR_INSTANTIATE_TRAINER(float)
MFSR_INSTANTIATE_TRAINER(double)

#undef MFSR_INSTANTIATE_TRAINER

}  // namespace mfsr
