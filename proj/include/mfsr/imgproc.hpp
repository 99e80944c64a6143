// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <limits>

#include "mfsr/tensor.hpp"

namespace mfsr {

inline constexpr double kBicubicA = -0.5;
inline constexpr std::size_t kDefaultBorderCrop = 8;

/// Separable bicubic resampling of every plane of an [N,C,H,W] tensor.
/// Pixel centers sit at half-integers, edge taps clamp to the border, and the
/// kernel is widened by 1/scale when shrinking (anti-aliasing). Taps are
/// renormalized so a constant image stays constant.
template <typename T>
BasicTensor<T> bicubic_resize(const BasicTensor<T>& image, std::size_t out_h, std::size_t out_w);

/// BT.601 luma of a [N,3,H,W] tensor in [0,1] -> [N,1,H,W].
template <typename T>
BasicTensor<T> rgb_to_y(const BasicTensor<T>& rgb);

/// 10 log10(1 / MSE) over the region left after dropping `border_crop` pixels on
/// each side. Identical inputs give +infinity.
template <typename T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t border_crop = kDefaultBorderCrop);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), peak 1,
/// evaluated at every window position fully inside the cropped region.
template <typename T>
double ssim(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t border_crop = kDefaultBorderCrop);

/// Normalized 1-D Gaussian taps used by ssim().
std::vector<double> gaussian_window(std::size_t size, double sigma);

// Netpbm I/O. PGM (P5) holds one channel, PPM (P6) three; maxval > 255 means
// 16-bit big-endian samples. Pixel values map to [0,1].
Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image, int bits);

}  // namespace mfsr
