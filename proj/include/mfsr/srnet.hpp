// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// FL-MFRN: two-stream feature extraction (thermal at LR with stride 1, visible
// at HR with three stride-2 convolutions), summation fusion followed by a 1x1
// channel recalibration, a residual trunk with long skips, and a cascaded x2
// deconvolution reconstruction with a parallel deconvolved-thermal path.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfsr/config.hpp"
#include "mfsr/ops.hpp"

namespace mfsr {

enum class Variant { kVT, kTT };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct NetworkConfig {
  std::size_t n_blocks = 16;
  std::size_t channels = 64;
  std::size_t scale = 8;
  /// Long skip adds the activation from `skip_period` blocks earlier at every
  /// multiple of `skip_period`; 0 disables long skips.
  std::size_t skip_period = 4;
  Variant variant = Variant::kVT;
  /// false: Conv(3,1,1) on the feature path, then add the thermal path.
  /// true: add the thermal path (broadcast over channels), then Conv(3,1,1).
  bool final_conv_after_add = false;

  void validate() const;
  ConfigFile to_config() const;
  static NetworkConfig from_config(const ConfigFile& cfg);
  bool operator==(const NetworkConfig&) const = default;
};

inline constexpr std::size_t kUpsampleStages = 3;
inline constexpr std::size_t kDeconvKernel = 4;
inline constexpr std::size_t kDeconvPadding = 1;

/// Ordered layer-name -> LayerParams inventory; a pure function of the config.
template <typename T>
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(const NetworkConfig& config);

  LayerParams<T>& at(const std::string& name);
  const LayerParams<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<std::pair<std::string, LayerParams<T>>>& layers() { return layers_; }
  const std::vector<std::pair<std::string, LayerParams<T>>>& layers() const { return layers_; }

  std::size_t parameter_count() const;
  void zero_grad();

  /// Kaiming init for learned convolutions, bilinear x2 kernels for the
  /// thermal path, gamma 1 / beta 0 for batch-norm. Deterministic in `seed`.
  void initialize(std::uint64_t seed);

  template <typename U>
  NetworkParams<U> cast() const;

 private:
  void add(std::string name, LayerParams<T> params);

  NetworkConfig config_;
  std::vector<std::pair<std::string, LayerParams<T>>> layers_;
  std::map<std::string, std::size_t> index_;

  template <typename U>
  friend class NetworkParams;
};

// ---- stage caches --------------------------------------------------------

template <typename T>
struct StreamCache {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> pre_activation;  // conv outputs before ReLU
};

template <typename T>
struct FuseCache {
  BasicTensor<T> fused;  // F_V + F_T
};

template <typename T>
struct BlockCache {
  BasicTensor<T> input;
  BasicTensor<T> conv1_out;
  BnCache<T> bn1;
  BasicTensor<T> bn1_out;
  BasicTensor<T> relu_out;
  BnCache<T> bn2;
};

template <typename T>
struct TrunkCache {
  std::vector<BlockCache<T>> blocks;
};

template <typename T>
struct ReconCache {
  std::vector<BasicTensor<T>> feature_inputs;  // deconv inputs, feature path
  std::vector<BasicTensor<T>> feature_pre;     // deconv outputs before ReLU
  BasicTensor<T> final_input;
  std::vector<BasicTensor<T>> thermal_inputs;
  BasicTensor<T> thermal_output;
};

template <typename T>
struct ForwardCache {
  StreamCache<T> thermal;
  StreamCache<T> visible;
  FuseCache<T> fuse;
  TrunkCache<T> trunk;
  ReconCache<T> recon;
};

// ---- stages --------------------------------------------------------------

template <typename T>
BasicTensor<T> extract_thermal(const BasicTensor<T>& thermal, const NetworkParams<T>& params,
                               StreamCache<T>* cache = nullptr);
template <typename T>
BasicTensor<T> extract_visible(const BasicTensor<T>& visible, const NetworkParams<T>& params,
                               StreamCache<T>* cache = nullptr);
template <typename T>
BasicTensor<T> fuse(const BasicTensor<T>& visible_features, const BasicTensor<T>& thermal_features,
                    const NetworkParams<T>& params, FuseCache<T>* cache = nullptr);
template <typename T>
BasicTensor<T> residual_trunk(const BasicTensor<T>& f0, NetworkParams<T>& params, const NetworkConfig& config,
                              BnMode mode, TrunkCache<T>* cache = nullptr);
template <typename T>
BasicTensor<T> reconstruct(const BasicTensor<T>& features, const BasicTensor<T>& thermal,
                           const NetworkParams<T>& params, const NetworkConfig& config,
                           ReconCache<T>* cache = nullptr);

/// V replaced by bicubic x`scale` of T for the TT variant; passthrough for VT.
template <typename T>
BasicTensor<T> visible_input(const BasicTensor<T>& visible, const BasicTensor<T>& thermal,
                             const NetworkConfig& config);

/// Full forward. `visible` is ignored (may be empty) for the TT variant.
template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& visible, const BasicTensor<T>& thermal, const NetworkConfig& config,
                       NetworkParams<T>& params, BnMode mode, ForwardCache<T>* cache = nullptr);

/// Accumulates parameter gradients (+=) for d loss / d output = grad_output.
template <typename T>
void backward(const ForwardCache<T>& cache, const BasicTensor<T>& grad_output, const NetworkConfig& config,
              NetworkParams<T>& params);

// ---- checkpoints ---------------------------------------------------------

/// Checkpoint = "MFSRCKPT\n", u64 manifest length, manifest text (network
/// config plus extra metadata), u32 tensor count, then per tensor a u32 name
/// length, the name, and one MFT1 blob.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config,
                     const NetworkParams<T>& params, const ConfigFile& metadata = {});

template <typename T>
struct Checkpoint {
  NetworkConfig config;
  NetworkParams<T> params;
  ConfigFile metadata;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Stored dtype of a checkpoint ("f32" or "f64") without loading tensors.
std::string checkpoint_precision(const std::filesystem::path& path);

/// Manifest text of a checkpoint (net.*, checkpoint.* and metadata keys).
ConfigFile checkpoint_manifest(const std::filesystem::path& path);

}  // namespace mfsr
