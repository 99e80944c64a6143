// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Forward and hand-written backward kernels for the layers FL-MFRN is built
// from. Convolutions are cross-correlations (no kernel flip). All kernels are
// pure functions of their arguments except batchnorm() in training mode, which
// updates the running statistics held in its LayerParams.

#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mfsr/tensor.hpp"

namespace mfsr {

/// Weight, bias and their gradients for one layer. Batch-norm layers store
/// gamma in `weight`, beta in `bias` and also carry running statistics.
template <typename T>
struct LayerParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  BasicTensor<T> grad_weight;
  BasicTensor<T> grad_bias;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  /// Conv weight layout [out, in, k, k]. `with_bias=false` leaves bias empty.
  static LayerParams conv(std::size_t out_ch, std::size_t in_ch, std::size_t k, bool with_bias = true);
  /// Transposed-conv weight layout [in, out, k, k].
  static LayerParams deconv(std::size_t in_ch, std::size_t out_ch, std::size_t k);
  static LayerParams batchnorm(std::size_t channels);

  bool is_batchnorm() const { return !running_mean.empty(); }
  std::size_t count() const { return weight.size() + bias.size(); }
  void zero_grad();
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding);
std::size_t deconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                              std::size_t output_padding);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                      std::size_t padding);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                             const BasicTensor<T>& grad_output, std::size_t stride, std::size_t padding);

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                        std::size_t padding, std::size_t output_padding = 0);

template <typename T>
ConvGrads<T> deconv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                               const BasicTensor<T>& grad_output, std::size_t stride, std::size_t padding,
                               std::size_t output_padding = 0);

enum class BnMode { kTrain, kEval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Saved forward state needed by batchnorm_backward.
template <typename T>
struct BnCache {
  BnMode mode = BnMode::kTrain;
  BasicTensor<T> normalized;  // pre-affine x-hat
  std::vector<T> inv_std;     // per channel
};

template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, LayerParams<T>& params, BnMode mode,
                         BnCache<T>* cache = nullptr, double epsilon = kBatchNormEpsilon,
                         double momentum = kBatchNormMomentum);

template <typename T>
ConvGrads<T> batchnorm_backward(const BasicTensor<T>& grad_output, const LayerParams<T>& params,
                                const BnCache<T>& cache);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

/// Gradient flows only where input > 0; the subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b);

/// Sum over all elements of |prediction - target|.
template <typename T>
double l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

/// sign(prediction - target) with sign(0) = 0.
template <typename T>
BasicTensor<T> l1_loss_backward(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

/// Fan-in scaled normal init: std = sqrt(2 / fan_in). Bias is zeroed.
template <typename T>
void kaiming_init(LayerParams<T>& params, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0);

}  // namespace mfsr
