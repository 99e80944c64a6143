// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Slow reference implementations used only as test oracles. They share no
// code with the library kernels.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mfsr/ops.hpp"
#include "mfsr/tensor.hpp"

namespace mfsr::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

inline LayerParams<double> random_conv(std::size_t out, std::size_t in, std::size_t k, std::uint64_t seed) {
  auto p = LayerParams<double>::conv(out, in, k);
  p.weight = random_tensor(p.weight.shape(), seed);
  p.bias = random_tensor(p.bias.shape(), seed + 1);
  return p;
}

inline LayerParams<double> random_deconv(std::size_t in, std::size_t out, std::size_t k, std::uint64_t seed) {
  auto p = LayerParams<double>::deconv(in, out, k);
  p.weight = random_tensor(p.weight.shape(), seed);
  p.bias = random_tensor(p.bias.shape(), seed + 1);
  return p;
}

// Direct seven-loop cross-correlation.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad) {
  const long n = long(x.dim(0)), c = long(x.dim(1)), h = long(x.dim(2)), wd = long(x.dim(3));
  const long o = long(w.dim(0)), k = long(w.dim(2));
  const long oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y(Shape{std::size_t(n), std::size_t(o), std::size_t(oh), std::size_t(ow)});
  for (long in = 0; in < n; ++in)
    for (long oc = 0; oc < o; ++oc)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) {
          double acc = b.empty() ? 0.0 : b[std::size_t(oc)];
          for (long ic = 0; ic < c; ++ic)
            for (long ki = 0; ki < k; ++ki)
              for (long kj = 0; kj < k; ++kj) {
                const long r = i * stride - pad + ki, s = j * stride - pad + kj;
                if (r < 0 || r >= h || s < 0 || s >= wd) continue;
                acc += x.at(std::size_t(in), std::size_t(ic), std::size_t(r), std::size_t(s)) *
                       w.at(std::size_t(oc), std::size_t(ic), std::size_t(ki), std::size_t(kj));
              }
          y.at(std::size_t(in), std::size_t(oc), std::size_t(i), std::size_t(j)) = acc;
        }
  return y;
}

// Scatter-add transposed convolution; weight layout [in, out, k, k].
inline Tensor naive_deconv(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad, long out_pad) {
  const long n = long(x.dim(0)), c = long(x.dim(1)), h = long(x.dim(2)), wd = long(x.dim(3));
  const long o = long(w.dim(1)), k = long(w.dim(2));
  const long oh = (h - 1) * stride - 2 * pad + k + out_pad, ow = (wd - 1) * stride - 2 * pad + k + out_pad;
  Tensor y(Shape{std::size_t(n), std::size_t(o), std::size_t(oh), std::size_t(ow)});
  for (long in = 0; in < n; ++in)
    for (long oc = 0; oc < o; ++oc)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) y.at(std::size_t(in), std::size_t(oc), std::size_t(i), std::size_t(j)) = b[std::size_t(oc)];
  for (long in = 0; in < n; ++in)
    for (long ic = 0; ic < c; ++ic)
      for (long i = 0; i < h; ++i)
        for (long j = 0; j < wd; ++j)
          for (long oc = 0; oc < o; ++oc)
            for (long ki = 0; ki < k; ++ki)
              for (long kj = 0; kj < k; ++kj) {
                const long r = i * stride - pad + ki, s = j * stride - pad + kj;
                if (r < 0 || r >= oh || s < 0 || s >= ow) continue;
                y.at(std::size_t(in), std::size_t(oc), std::size_t(r), std::size_t(s)) +=
                    x.at(std::size_t(in), std::size_t(ic), std::size_t(i), std::size_t(j)) *
                    w.at(std::size_t(ic), std::size_t(oc), std::size_t(ki), std::size_t(kj));
              }
  return y;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// PSNR for unit peak over the border-cropped planes, one pixel at a time.
inline double naive_psnr(const Tensor& a, const Tensor& b, std::size_t crop) {
  const std::size_t h = a.dim(2), w = a.dim(3);
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.dim(0) * a.dim(1); ++p)
    for (std::size_t i = crop; i < h - crop; ++i)
      for (std::size_t j = crop; j < w - crop; ++j) {
        const double d = a[(p * h + i) * w + j] - b[(p * h + i) * w + j];
        se += d * d;
        ++n;
      }
  return 10.0 * std::log10(1.0 / (se / double(n)));
}

// Per-window SSIM straight from the definition.
inline double naive_ssim(const Tensor& a, const Tensor& b, std::size_t crop) {
  const std::size_t h = a.dim(2), w = a.dim(3), win = 11;
  std::vector<double> g(win);
  double gs = 0.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = double(i) - 5.0;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < a.dim(0) * a.dim(1); ++p) {
    const double* pa = a.ptr() + p * h * w;
    const double* pb = b.ptr() + p * h * w;
    for (std::size_t y = crop; y + win <= h - crop; ++y)
      for (std::size_t x = crop; x + win <= w - crop; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < win; ++i)
          for (std::size_t j = 0; j < win; ++j) {
            const double wt = g[i] * g[j];
            const double va = pa[(y + i) * w + x + j], vb = pb[(y + i) * w + x + j];
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  }
  return total / double(count);
}

}  // namespace mfsr::testing
