// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Patch sampling, online augmentation, Adam and the train/evaluate loops.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsr/config.hpp"
#include "mfsr/dataset.hpp"
#include "mfsr/imgproc.hpp"
#include "mfsr/srnet.hpp"

namespace mfsr {

struct TrainConfig {
  NetworkConfig net;
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  std::size_t lr_half_every = 20;
  std::size_t epochs = 80;
  std::size_t patch_hr = 96;
  std::size_t patch_lr = 12;
  std::size_t patches_per_image = 16;
  std::uint64_t seed = 1;
  std::string precision = "f32";
  bool augment_rotation = true;
  bool augment_flip = true;
  bool augment_scaling = true;
  std::vector<double> scales{0.6, 0.8, 1.0};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t eval_border = 8;

  void validate() const;
  /// Keys under [train] and [net]; missing keys keep the defaults above.
  static TrainConfig from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
};

/// lr0 * 0.5^floor(epoch / lr_half_every).
double learning_rate(const TrainConfig& config, std::size_t epoch);

// ---- data ---------------------------------------------------------------------

/// One aligned pair: luminance of the visible image and the HR thermal image,
/// both [1,1,H,W].
struct ImagePair {
  std::string id;
  Tensor visible_y;
  Tensor thermal;
  Tensor salient;  // labels, empty when the manifest has none
};

/// Loads every sample of `split`; visible images are reduced to Y.
std::vector<ImagePair> load_split(const DatasetManifest& manifest, Split split);

struct PatchTriple {
  Tensor visible_hr;  // [1,1,patch_hr,patch_hr]
  Tensor thermal_lr;  // [1,1,patch_lr,patch_lr]
  Tensor thermal_hr;  // [1,1,patch_hr,patch_hr]
  std::size_t lr_x = 0, lr_y = 0;  // LR crop origin; the HR crop starts at scale * (x, y)
};

struct AugmentParams {
  int quarter_turns = 0;  // counter-clockwise
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double scale = 1.0;

  bool is_identity() const { return quarter_turns % 4 == 0 && !flip_horizontal && !flip_vertical && scale == 1.0; }
};

AugmentParams draw_augment(const TrainConfig& config, std::mt19937_64& rng);

/// Rescale (bicubic, extents rounded to a multiple of `multiple`), then
/// flips, then rotation. Applies to every plane of [N,C,H,W].
Tensor apply_augment(const Tensor& image, const AugmentParams& params, std::size_t multiple);

/// Applies the same draw to the visible and thermal images of `pair`.
ImagePair augment(const ImagePair& pair, const TrainConfig& config, std::mt19937_64& rng);

/// Crops `count` co-located triples at uniformly random LR positions. The LR
/// image is bicubic / scale of the (already augmented) HR thermal image.
/// Returns nothing, with a warning, when the image is smaller than a patch.
std::vector<PatchTriple> make_training_pairs(const ImagePair& pair, const TrainConfig& config, std::size_t count,
                                             std::mt19937_64& rng);

// ---- optimizer ------------------------------------------------------------------

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of `params` in place. Throws
/// NonFiniteGradient (leaving params and state untouched) on NaN/Inf.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

/// Adam over every weight, bias and batch-norm affine tensor of a network.
template <typename T>
class NetworkOptimizer {
 public:
  explicit NetworkOptimizer(const AdamHyper& hyper) : hyper_(hyper) {}
  void step(NetworkParams<T>& params, double lr);
  std::size_t steps() const { return steps_; }

 private:
  AdamHyper hyper_;
  std::vector<AdamState> states_;
  std::size_t steps_ = 0;
};

// ---- training and evaluation ------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // mean L1 per pixel over the epoch
  double test_psnr = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::filesystem::path checkpoint;
  double final_test_psnr = 0.0;
};

/// Trains from scratch and writes `out_dir`/model.ckpt and train_log.csv.
/// Deterministic for a fixed seed and worker count.
TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, const std::filesystem::path& out_dir);

struct EvalRow {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string variant;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr() const;
  double mean_ssim() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Scores a network on the test split only. Inputs are the full test images.
template <typename T>
EvalReport evaluate(const NetworkConfig& config, NetworkParams<T>& params, const std::vector<ImagePair>& test,
                    std::size_t border = kDefaultBorderCrop);

/// Loads the checkpoint (either precision) and scores it on the test split.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                               std::size_t border = kDefaultBorderCrop);

/// Bicubic x`scale` of the LR thermal image against the HR ground truth.
EvalReport evaluate_bicubic(const std::vector<ImagePair>& test, std::size_t scale, std::size_t border = kDefaultBorderCrop);

/// Super-resolves one pair: the LR input is bicubic / scale of `pair.thermal`.
template <typename T>
Tensor super_resolve(const NetworkConfig& config, NetworkParams<T>& params, const ImagePair& pair);

}  // namespace mfsr
