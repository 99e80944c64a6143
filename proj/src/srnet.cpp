// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/srnet.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "mfsr/imgproc.hpp"
#include "mfsr/serialize.hpp"

namespace mfsr {
namespace {

constexpr std::size_t kStreamDepth = 3;
constexpr char kCheckpointMagic[] = "MFSRCKPT\n";

std::string stream_layer(const char* stream, std::size_t i) {
  return std::string(stream) + ".conv" + std::to_string(i + 1);
}

std::string block_layer(std::size_t block, const char* part) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trunk.block%02zu.%s", block + 1, part);
  return buf;
}

std::string recon_deconv(std::size_t i) { return "recon.deconv" + std::to_string(i + 1); }
std::string thermal_deconv(std::size_t i) { return "thermal_path.deconv" + std::to_string(i + 1); }

template <typename T>
void accumulate(LayerParams<T>& p, const ConvGrads<T>& g) {
  add_inplace(p.grad_weight, g.weight);
  if (!p.bias.empty()) add_inplace(p.grad_bias, g.bias);
}

template <typename T>
BasicTensor<T> stream_forward(const BasicTensor<T>& input, const NetworkParams<T>& params, const char* name,
                              std::size_t stride, StreamCache<T>* cache) {
  if (cache) {
    cache->input = input;
    cache->pre_activation.clear();
  }
  BasicTensor<T> x = input;
  for (std::size_t i = 0; i < kStreamDepth; ++i) {
    BasicTensor<T> z = conv2d(x, params.at(stream_layer(name, i)), stride, 1);
    x = relu(z);
    if (cache) cache->pre_activation.push_back(std::move(z));
  }
  return x;
}

template <typename T>
void stream_backward(const StreamCache<T>& cache, BasicTensor<T> grad, NetworkParams<T>& params, const char* name,
                     std::size_t stride) {
  for (std::size_t i = kStreamDepth; i-- > 0;) {
    grad = relu_backward(cache.pre_activation[i], grad);
    const BasicTensor<T> in = i == 0 ? cache.input : relu(cache.pre_activation[i - 1]);
    auto& layer = params.at(stream_layer(name, i));
    auto g = conv2d_backward(in, layer, grad, stride, 1);
    accumulate(layer, g);
    grad = std::move(g.input);
  }
}

// Sum over channels of an [N,C,H,W] tensor -> [N,1,H,W].
template <typename T>
BasicTensor<T> channel_sum(const BasicTensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> out(Shape{n, 1, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) out[b * plane + i] += x[(b * c + ch) * plane + i];
  return out;
}

// x[N,C,H,W] + t[N,1,H,W] broadcast over channels.
template <typename T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& x, const BasicTensor<T>& t) {
  if (t.dim(0) != x.dim(0) || t.dim(1) != 1 || t.dim(2) != x.dim(2) || t.dim(3) != x.dim(3)) {
    throw ShapeError("broadcast add: " + shape_str(t.shape()) + " does not broadcast to " + shape_str(x.shape()));
  }
  BasicTensor<T> out = x;
  const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) out[(b * c + ch) * plane + i] += t[b * plane + i];
  return out;
}

void fill_bilinear_x2(auto& params) {
  constexpr double taps[kDeconvKernel] = {0.25, 0.75, 0.75, 0.25};
  auto& w = params.weight;
  w.fill(0);
  const std::size_t n = std::min(w.dim(0), w.dim(1));
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t i = 0; i < kDeconvKernel; ++i)
      for (std::size_t j = 0; j < kDeconvKernel; ++j) w.at(c, c, i, j) = taps[i] * taps[j];
  params.bias.fill(0);
  params.zero_grad();
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::kVT ? "VT" : "TT"; }

Variant parse_variant(const std::string& s) {
  if (s == "VT" || s == "vt") return Variant::kVT;
  if (s == "TT" || s == "tt") return Variant::kTT;
  throw ConfigError("unknown network variant: " + s + " (expected VT or TT)");
}

void NetworkConfig::validate() const {
  if (channels == 0) throw ConfigError("network channels must be positive");
  if (scale != (std::size_t{1} << kUpsampleStages)) {
    throw ConfigError("network scale must be 8 (three cascaded x2 deconvolutions), got " + std::to_string(scale));
  }
}

ConfigFile NetworkConfig::to_config() const {
  ConfigFile cfg;
  cfg.set("n_blocks", n_blocks);
  cfg.set("channels", channels);
  cfg.set("scale", scale);
  cfg.set("skip_period", skip_period);
  cfg.set("variant", to_string(variant));
  cfg.set("final_conv_after_add", final_conv_after_add);
  return cfg;
}

NetworkConfig NetworkConfig::from_config(const ConfigFile& cfg) {
  NetworkConfig c;
  auto non_negative = [&](const char* key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string("network ") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.n_blocks = non_negative("n_blocks", c.n_blocks);
  c.channels = non_negative("channels", c.channels);
  c.scale = non_negative("scale", c.scale);
  c.skip_period = non_negative("skip_period", c.skip_period);
  c.variant = parse_variant(cfg.get_or("variant", to_string(c.variant)));
  c.final_conv_after_add = cfg.get_bool("final_conv_after_add", c.final_conv_after_add);
  c.validate();
  return c;
}

// ---- NetworkParams ---------------------------------------------------------

template <typename T>
NetworkParams<T>::NetworkParams(const NetworkConfig& config) : config_(config) {
  config.validate();
  const std::size_t c = config.channels;
  for (std::size_t i = 0; i < kStreamDepth; ++i) add(stream_layer("thermal", i), LayerParams<T>::conv(c, i ? c : 1, 3));
  for (std::size_t i = 0; i < kStreamDepth; ++i) add(stream_layer("visible", i), LayerParams<T>::conv(c, i ? c : 1, 3));
  add("fuse.conv", LayerParams<T>::conv(c, c, 1));
  // Bias before batch-norm is cancelled by the mean subtraction, so the trunk
  // convolutions carry none.
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    add(block_layer(b, "conv1"), LayerParams<T>::conv(c, c, 3, false));
    add(block_layer(b, "bn1"), LayerParams<T>::batchnorm(c));
    add(block_layer(b, "conv2"), LayerParams<T>::conv(c, c, 3, false));
    add(block_layer(b, "bn2"), LayerParams<T>::batchnorm(c));
  }
  for (std::size_t i = 0; i < kUpsampleStages; ++i) add(recon_deconv(i), LayerParams<T>::deconv(c, c, kDeconvKernel));
  add("recon.conv", LayerParams<T>::conv(1, c, 3));
  for (std::size_t i = 0; i < kUpsampleStages; ++i) add(thermal_deconv(i), LayerParams<T>::deconv(1, 1, kDeconvKernel));
}

template <typename T>
void NetworkParams<T>::add(std::string name, LayerParams<T> params) {
  index_[name] = layers_.size();
  layers_.emplace_back(std::move(name), std::move(params));
}

template <typename T>
LayerParams<T>& NetworkParams<T>::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no layer named " + name);
  return layers_[it->second].second;
}

template <typename T>
const LayerParams<T>& NetworkParams<T>::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no layer named " + name);
  return layers_[it->second].second;
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, p] : layers_) total += p.count();
  return total;
}

template <typename T>
void NetworkParams<T>::zero_grad() {
  for (auto& [name, p] : layers_) p.zero_grad();
}

template <typename T>
void NetworkParams<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : layers_) {
    if (p.is_batchnorm()) {
      p.weight.fill(T(1));
      p.bias.fill(T(0));
      p.running_mean.fill(T(0));
      p.running_var.fill(T(1));
      p.zero_grad();
    } else if (name.rfind("thermal_path.", 0) == 0) {
      fill_bilinear_x2(p);
    } else if (name == "recon.conv" && !config_.final_conv_after_add) {
      // Zero residual: the untrained network reproduces the thermal path.
      p.weight.fill(T(0));
      p.bias.fill(T(0));
      p.zero_grad();
    } else if (name.rfind("recon.deconv", 0) == 0) {
      // Each output pixel of a k4/s2 transposed conv sees (k/s)^2 taps per input channel.
      const std::size_t k = p.weight.dim(2);
      kaiming_init(p, p.weight.dim(0) * (k / 2) * (k / 2), rng);
    } else {
      kaiming_init(p, p.weight.dim(1) * p.weight.dim(2) * p.weight.dim(3), rng);
    }
  }
}

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
  NetworkParams<U> out;
  out.config_ = config_;
  out.index_ = index_;
  for (const auto& [name, p] : layers_) {
    LayerParams<U> q;
    q.weight = p.weight.template cast<U>();
    q.bias = p.bias.template cast<U>();
    q.running_mean = p.running_mean.template cast<U>();
    q.running_var = p.running_var.template cast<U>();
    q.zero_grad();
    out.layers_.emplace_back(name, std::move(q));
  }
  return out;
}

// ---- stages ----------------------------------------------------------------

template <typename T>
BasicTensor<T> extract_thermal(const BasicTensor<T>& thermal, const NetworkParams<T>& params, StreamCache<T>* cache) {
  require_rank(thermal, 4, "extract_thermal");
  if (thermal.dim(1) != 1) throw ShapeError("extract_thermal: expected 1 channel, got " + shape_str(thermal.shape()));
  return stream_forward(thermal, params, "thermal", 1, cache);
}

template <typename T>
BasicTensor<T> extract_visible(const BasicTensor<T>& visible, const NetworkParams<T>& params, StreamCache<T>* cache) {
  require_rank(visible, 4, "extract_visible");
  if (visible.dim(1) != 1) throw ShapeError("extract_visible: expected 1 channel, got " + shape_str(visible.shape()));
  if (visible.dim(2) % 8 != 0 || visible.dim(3) % 8 != 0 || visible.dim(2) == 0 || visible.dim(3) == 0) {
    throw ShapeError("extract_visible: extents must be positive multiples of 8, got " + shape_str(visible.shape()));
  }
  return stream_forward(visible, params, "visible", 2, cache);
}

template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& visible_features, const BasicTensor<T>& thermal_features,
                    const NetworkParams<T>& params, FuseCache<T>* cache) {
  require_same_shape(visible_features, thermal_features, "fuse");
  BasicTensor<T> fused = add(visible_features, thermal_features);
  BasicTensor<T> out = conv2d(fused, params.at("fuse.conv"), 1, 0);
  if (cache) cache->fused = std::move(fused);
  return out;
}

template <typename T>
BasicTensor<T> residual_trunk(const BasicTensor<T>& f0, NetworkParams<T>& params, const NetworkConfig& config,
                              BnMode mode, TrunkCache<T>* cache) {
  if (cache) cache->blocks.assign(config.n_blocks, {});
  if (config.n_blocks == 0) return f0;
  BasicTensor<T> x = f0;
  BasicTensor<T> saved = f0;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    BlockCache<T> local;
    BlockCache<T>& bc = cache ? cache->blocks[b] : local;
    bc.input = x;
    bc.conv1_out = conv2d(x, params.at(block_layer(b, "conv1")), 1, 1);
    bc.bn1_out = batchnorm(bc.conv1_out, params.at(block_layer(b, "bn1")), mode, &bc.bn1);
    bc.relu_out = relu(bc.bn1_out);
    BasicTensor<T> c2 = conv2d(bc.relu_out, params.at(block_layer(b, "conv2")), 1, 1);
    BasicTensor<T> y = batchnorm(c2, params.at(block_layer(b, "bn2")), mode, &bc.bn2);
    add_inplace(y, x);
    if (config.skip_period > 0 && (b + 1) % config.skip_period == 0) {
      add_inplace(y, saved);
      saved = y;
    }
    x = std::move(y);
  }
  add_inplace(x, f0);
  return x;
}

template <typename T>
BasicTensor<T> reconstruct(const BasicTensor<T>& features, const BasicTensor<T>& thermal,
                           const NetworkParams<T>& params, const NetworkConfig& config, ReconCache<T>* cache) {
  require_rank(features, 4, "reconstruct");
  require_rank(thermal, 4, "reconstruct");
  if (features.dim(0) != thermal.dim(0) || features.dim(2) != thermal.dim(2) || features.dim(3) != thermal.dim(3) ||
      thermal.dim(1) != 1) {
    throw ShapeError("reconstruct: feature map " + shape_str(features.shape()) + " and thermal " +
                     shape_str(thermal.shape()) + " disagree spatially");
  }
  ReconCache<T> local;
  ReconCache<T>& rc = cache ? *cache : local;
  rc.feature_inputs.clear();
  rc.feature_pre.clear();
  rc.thermal_inputs.clear();
  BasicTensor<T> d = features;
  for (std::size_t i = 0; i < kUpsampleStages; ++i) {
    BasicTensor<T> z = deconv2d(d, params.at(recon_deconv(i)), 2, kDeconvPadding);
    rc.feature_inputs.push_back(std::move(d));
    d = relu(z);
    rc.feature_pre.push_back(std::move(z));
  }
  BasicTensor<T> t = thermal;
  for (std::size_t i = 0; i < kUpsampleStages; ++i) {
    BasicTensor<T> next = deconv2d(t, params.at(thermal_deconv(i)), 2, kDeconvPadding);
    rc.thermal_inputs.push_back(std::move(t));
    t = std::move(next);
  }
  rc.thermal_output = t;
  if (config.final_conv_after_add) {
    rc.final_input = add_broadcast(d, t);
    return conv2d(rc.final_input, params.at("recon.conv"), 1, 1);
  }
  rc.final_input = std::move(d);
  BasicTensor<T> out = conv2d(rc.final_input, params.at("recon.conv"), 1, 1);
  add_inplace(out, t);
  return out;
}

template <typename T>
BasicTensor<T> visible_input(const BasicTensor<T>& visible, const BasicTensor<T>& thermal,
                             const NetworkConfig& config) {
  require_rank(thermal, 4, "forward");
  if (config.variant == Variant::kTT) {
    return bicubic_resize(thermal, thermal.dim(2) * config.scale, thermal.dim(3) * config.scale);
  }
  require_rank(visible, 4, "forward");
  if (visible.dim(0) != thermal.dim(0) || visible.dim(2) != thermal.dim(2) * config.scale ||
      visible.dim(3) != thermal.dim(3) * config.scale) {
    throw ShapeError("forward: visible " + shape_str(visible.shape()) + " must be x" + std::to_string(config.scale) +
                     " the thermal " + shape_str(thermal.shape()));
  }
  return visible;
}

template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& visible, const BasicTensor<T>& thermal, const NetworkConfig& config,
                       NetworkParams<T>& params, BnMode mode, ForwardCache<T>* cache) {
  const BasicTensor<T> v = visible_input(visible, thermal, config);
  const BasicTensor<T> ft = extract_thermal(thermal, params, cache ? &cache->thermal : nullptr);
  const BasicTensor<T> fv = extract_visible(v, params, cache ? &cache->visible : nullptr);
  const BasicTensor<T> f0 = fuse(fv, ft, params, cache ? &cache->fuse : nullptr);
  const BasicTensor<T> fn = residual_trunk(f0, params, config, mode, cache ? &cache->trunk : nullptr);
  return reconstruct(fn, thermal, params, config, cache ? &cache->recon : nullptr);
}

template <typename T>
void backward(const ForwardCache<T>& cache, const BasicTensor<T>& grad_output, const NetworkConfig& config,
              NetworkParams<T>& params) {
  const ReconCache<T>& rc = cache.recon;
  // Final convolution and the thermal path.
  auto& final_layer = params.at("recon.conv");
  auto gf = conv2d_backward(rc.final_input, final_layer, grad_output, 1, 1);
  accumulate(final_layer, gf);
  BasicTensor<T> grad_thermal_out = config.final_conv_after_add ? channel_sum(gf.input) : grad_output;
  BasicTensor<T> grad_d = std::move(gf.input);
  for (std::size_t i = kUpsampleStages; i-- > 0;) {
    auto& layer = params.at(thermal_deconv(i));
    auto g = deconv2d_backward(rc.thermal_inputs[i], layer, grad_thermal_out, 2, kDeconvPadding);
    accumulate(layer, g);
    grad_thermal_out = std::move(g.input);
  }
  for (std::size_t i = kUpsampleStages; i-- > 0;) {
    grad_d = relu_backward(rc.feature_pre[i], grad_d);
    auto& layer = params.at(recon_deconv(i));
    auto g = deconv2d_backward(rc.feature_inputs[i], layer, grad_d, 2, kDeconvPadding);
    accumulate(layer, g);
    grad_d = std::move(g.input);
  }

  // Residual trunk. grads[i] is d loss / d (output of block i), grads[0] for F_0.
  const std::size_t nb = config.n_blocks;
  BasicTensor<T> grad_f0;
  if (nb == 0) {
    grad_f0 = std::move(grad_d);
  } else {
    std::vector<BasicTensor<T>> grads(nb + 1);
    grads[0] = grad_d;  // global skip
    grads[nb] = std::move(grad_d);
    const std::size_t period = config.skip_period;
    for (std::size_t b = nb; b-- > 0;) {
      const BasicTensor<T> g = std::move(grads[b + 1]);
      const BlockCache<T>& bc = cache.trunk.blocks[b];
      if (period > 0 && (b + 1) % period == 0) {
        const std::size_t src = b + 1 - period;
        if (grads[src].empty()) grads[src] = BasicTensor<T>::zeros_like(g);
        add_inplace(grads[src], g);
      }
      auto& bn2 = params.at(block_layer(b, "bn2"));
      auto gb2 = batchnorm_backward(g, bn2, bc.bn2);
      accumulate(bn2, gb2);
      auto& conv2 = params.at(block_layer(b, "conv2"));
      auto gc2 = conv2d_backward(bc.relu_out, conv2, gb2.input, 1, 1);
      accumulate(conv2, gc2);
      BasicTensor<T> gr = relu_backward(bc.bn1_out, gc2.input);
      auto& bn1 = params.at(block_layer(b, "bn1"));
      auto gb1 = batchnorm_backward(gr, bn1, bc.bn1);
      accumulate(bn1, gb1);
      auto& conv1 = params.at(block_layer(b, "conv1"));
      auto gc1 = conv2d_backward(bc.input, conv1, gb1.input, 1, 1);
      accumulate(conv1, gc1);
      if (grads[b].empty()) grads[b] = BasicTensor<T>::zeros_like(g);
      add_inplace(grads[b], g);
      add_inplace(grads[b], gc1.input);
    }
    grad_f0 = std::move(grads[0]);
  }

  // Fusion: both streams receive the same gradient.
  auto& fuse_layer = params.at("fuse.conv");
  auto gfu = conv2d_backward(cache.fuse.fused, fuse_layer, grad_f0, 1, 0);
  accumulate(fuse_layer, gfu);
  stream_backward(cache.visible, gfu.input, params, "visible", 2);
  stream_backward(cache.thermal, std::move(gfu.input), params, "thermal", 1);
}

// ---- checkpoints -----------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config, const NetworkParams<T>& params,
                     const ConfigFile& metadata) {
  std::vector<std::pair<std::string, const BasicTensor<T>*>> tensors;
  for (const auto& [name, p] : params.layers()) {
    tensors.emplace_back(name + ".weight", &p.weight);
    tensors.emplace_back(name + ".bias", &p.bias);
    if (p.is_batchnorm()) {
      tensors.emplace_back(name + ".running_mean", &p.running_mean);
      tensors.emplace_back(name + ".running_var", &p.running_var);
    }
  }
  ConfigFile manifest;
  manifest.merge(config.to_config(), "net");
  manifest.merge(metadata, "meta");
  manifest.set("checkpoint.precision", std::string(dtype_of<T>() == DType::kF32 ? "f32" : "f64"));
  manifest.set("checkpoint.tensors", tensors.size());
  manifest.set("checkpoint.parameters", params.parameter_count());
  const std::string text = manifest.to_string();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  write_u64(out, text.size());
  out.write(text.data(), std::streamsize(text.size()));
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_tensor(out, *tensor);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

namespace {

ConfigFile read_manifest(std::istream& in, const std::filesystem::path& path) {
  std::string magic(sizeof(kCheckpointMagic) - 1, '\0');
  if (!in.read(magic.data(), std::streamsize(magic.size())) || magic != kCheckpointMagic) {
    throw FormatError("not a checkpoint file: " + path.string());
  }
  const auto length = read_u64(in);
  if (length > (1u << 24)) throw FormatError("checkpoint manifest too large: " + path.string());
  std::string text(length, '\0');
  if (!in.read(text.data(), std::streamsize(length))) throw FormatError("truncated checkpoint manifest");
  return ConfigFile::parse(text);
}

}  // namespace

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const ConfigFile manifest = read_manifest(in, path);
  Checkpoint<T> ck;
  ck.config = NetworkConfig::from_config(manifest.table("net"));
  ck.metadata = manifest.table("meta");
  ck.params = NetworkParams<T>(ck.config);
  std::map<std::string, BasicTensor<T>*> slots;
  for (auto& [name, p] : ck.params.layers()) {
    slots[name + ".weight"] = &p.weight;
    slots[name + ".bias"] = &p.bias;
    if (p.is_batchnorm()) {
      slots[name + ".running_mean"] = &p.running_mean;
      slots[name + ".running_var"] = &p.running_var;
    }
  }
  const auto count = read_u32(in);
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_u32(in);
    if (len > 4096) throw FormatError("checkpoint tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated checkpoint");
    const auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint tensor " + name + " is not part of the layer inventory");
    BasicTensor<T> t = read_tensor<T>(in);
    if (t.shape() != it->second->shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(it->second->shape()));
    }
    *it->second = std::move(t);
    slots.erase(it);
  }
  ck.params.zero_grad();
  return ck;
}

std::string checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_manifest(in, path).get_or("checkpoint.precision", "f64");
}

ConfigFile checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_manifest(in, path);
}

#define MFSR_INSTANTIATE_SRNET(T)                                                                               \
  template class NetworkParams<T>;                                                                              \
  template BasicTensor<T> extract_thermal(const BasicTensor<T>&, const NetworkParams<T>&, StreamCache<T>*);     \
  template BasicTensor<T> extract_visible(const BasicTensor<T>&, const NetworkParams<T>&, StreamCache<T>*);     \
  template BasicTensor<T> fuse(const BasicTensor<T>&, const BasicTensor<T>&, const NetworkParams<T>&,           \
                               FuseCache<T>*);                                                                  \
  template BasicTensor<T> residual_trunk(const BasicTensor<T>&, NetworkParams<T>&, const NetworkConfig&, BnMode, \
                                         TrunkCache<T>*);                                                       \
  template BasicTensor<T> reconstruct(const BasicTensor<T>&, const BasicTensor<T>&, const NetworkParams<T>&,    \
                                      const NetworkConfig&, ReconCache<T>*);                                    \
  template BasicTensor<T> visible_input(const BasicTensor<T>&, const BasicTensor<T>&, const NetworkConfig&);    \
  template BasicTensor<T> forward(const BasicTensor<T>&, const BasicTensor<T>&, const NetworkConfig&,           \
                                  NetworkParams<T>&, BnMode, ForwardCache<T>*);                                 \
  template void backward(const ForwardCache<T>&, const BasicTensor<T>&, const NetworkConfig&, NetworkParams<T>&); \
  template void save_checkpoint(const std::filesystem::path&, const NetworkConfig&, const NetworkParams<T>&,    \
                                const ConfigFile&);                                                             \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);

MFSR_INSTANTIATE_SRNET(float)
MFSR_INSTANTIATE_SRNET(double)

template NetworkParams<float> NetworkParams<double>::cast<float>() const;
template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<double> NetworkParams<double>::cast<double>() const;
template NetworkParams<float> NetworkParams<float>::cast<float>() const;

#undef MFSR_INSTANTIATE_SRNET

}  // namespace mfsr
