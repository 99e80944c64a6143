// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "mfsr/parallel.hpp"

namespace mfsr {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Sliding-window geometry of a (C, H, W) image traversed by a k x k window.
struct Window {
  std::size_t channels, height, width, k, stride, padding, out_h, out_w;
  std::size_t rows() const { return channels * k * k; }
  std::size_t positions() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const Window& g, T* cols) {
  const std::ptrdiff_t h = std::ptrdiff_t(g.height), w = std::ptrdiff_t(g.width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        T* dst = cols + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride + ki) - std::ptrdiff_t(g.padding);
          T* line = dst + oh * g.out_w;
          if (ih < 0 || ih >= h) {
            std::fill(line, line + g.out_w, T(0));
            continue;
          }
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride + kj) - std::ptrdiff_t(g.padding);
            line[ow] = (iw < 0 || iw >= w) ? T(0) : plane[ih * w + iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into a zeroed image.
template <typename T>
void col2im(const T* cols, const Window& g, T* image) {
  const std::ptrdiff_t h = std::ptrdiff_t(g.height), w = std::ptrdiff_t(g.width);
  std::fill(image, image + g.channels * g.height * g.width, T(0));
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
        const T* src = cols + row * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride + ki) - std::ptrdiff_t(g.padding);
          if (ih < 0 || ih >= h) continue;
          const T* line = src + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride + kj) - std::ptrdiff_t(g.padding);
            if (iw >= 0 && iw < w) plane[ih * w + iw] += line[ow];
          }
        }
      }
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

template <typename T>
void check_kernel(const BasicTensor<T>& input, const LayerParams<T>& params, const char* op) {
  require_rank(input, 4, op);
  require_rank(params.weight, 4, op);
  require(params.weight.dim(2) == params.weight.dim(3),
          std::string(op) + ": kernel must be square, got " + shape_str(params.weight.shape()));
  require(params.weight.dim(2) > 0, std::string(op) + ": empty kernel");
}

template <typename T>
Window conv_window(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                   std::size_t padding) {
  check_kernel(input, params, "conv2d");
  require(stride > 0, "conv2d: stride must be positive");
  const std::size_t k = params.weight.dim(2);
  require(params.weight.dim(1) == input.dim(1),
          "conv2d: input has " + std::to_string(input.dim(1)) + " channels but kernel expects " +
              std::to_string(params.weight.dim(1)));
  require(input.dim(2) + 2 * padding >= k && input.dim(3) + 2 * padding >= k,
          "conv2d: padded input " + shape_str(input.shape()) + " smaller than kernel " + std::to_string(k));
  if (!params.bias.empty()) {
    require(params.bias.size() == params.weight.dim(0), "conv2d: bias length does not match out channels");
  }
  return Window{input.dim(1), input.dim(2), input.dim(3), k, stride, padding,
                conv_out_extent(input.dim(2), k, stride, padding),
                conv_out_extent(input.dim(3), k, stride, padding)};
}

template <typename T>
Window deconv_window(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                     std::size_t padding, std::size_t output_padding) {
  check_kernel(input, params, "deconv2d");
  require(stride > 0, "deconv2d: stride must be positive");
  require(output_padding < stride, "deconv2d: output_padding must be smaller than stride");
  require(params.weight.dim(0) == input.dim(1),
          "deconv2d: input has " + std::to_string(input.dim(1)) + " channels but kernel expects " +
              std::to_string(params.weight.dim(0)));
  const std::size_t k = params.weight.dim(2);
  const std::size_t out_h = deconv_out_extent(input.dim(2), k, stride, padding, output_padding);
  const std::size_t out_w = deconv_out_extent(input.dim(3), k, stride, padding, output_padding);
  if (!params.bias.empty()) {
    require(params.bias.size() == params.weight.dim(1), "deconv2d: bias length does not match out channels");
  }
  // Window over the (larger) output image; its positions are the input pixels.
  return Window{params.weight.dim(1), out_h, out_w, k, stride, padding, input.dim(2), input.dim(3)};
}

template <typename T>
void add_channel_bias(T* out, const BasicTensor<T>& bias, std::size_t plane) {
  if (bias.empty()) return;
  for (std::size_t c = 0; c < bias.size(); ++c) {
    T* p = out + c * plane;
    const T b = bias[c];
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

template <typename T>
BasicTensor<T> bias_grad(const BasicTensor<T>& grad_output, bool has_bias) {
  if (!has_bias) return BasicTensor<T>(Shape{0});
  const std::size_t n = grad_output.dim(0), c = grad_output.dim(1);
  const std::size_t plane = grad_output.dim(2) * grad_output.dim(3);
  BasicTensor<T> g(Shape{c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = grad_output.ptr() + (b * c + ch) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      g[ch] += acc;
    }
  }
  return g;
}

// Sums per-sample partial weight gradients in sample order.
template <typename T>
BasicTensor<T> reduce_partials(const std::vector<std::vector<T>>& partials, const Shape& shape) {
  BasicTensor<T> g(shape);
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < part.size(); ++i) g[i] += part[i];
  }
  return g;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < k) throw ShapeError("conv extent: padded input smaller than kernel");
  return (in + 2 * padding - k) / stride + 1;
}

std::size_t deconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding,
                              std::size_t output_padding) {
  const long long extent = (static_cast<long long>(in) - 1) * static_cast<long long>(stride) -
                           2 * static_cast<long long>(padding) + static_cast<long long>(k) +
                           static_cast<long long>(output_padding);
  if (in == 0 || extent <= 0) {
    throw ShapeError("deconv2d: computed output extent " + std::to_string(extent) + " is not positive");
  }
  return static_cast<std::size_t>(extent);
}

template <typename T>
LayerParams<T> LayerParams<T>::conv(std::size_t out_ch, std::size_t in_ch, std::size_t k, bool with_bias) {
  LayerParams p;
  p.weight = BasicTensor<T>(Shape{out_ch, in_ch, k, k});
  p.bias = BasicTensor<T>(Shape{with_bias ? out_ch : 0});
  p.zero_grad();
  return p;
}

template <typename T>
LayerParams<T> LayerParams<T>::deconv(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
  LayerParams p;
  p.weight = BasicTensor<T>(Shape{in_ch, out_ch, k, k});
  p.bias = BasicTensor<T>(Shape{out_ch});
  p.zero_grad();
  return p;
}

template <typename T>
LayerParams<T> LayerParams<T>::batchnorm(std::size_t channels) {
  LayerParams p;
  p.weight = BasicTensor<T>(Shape{channels}, T(1));
  p.bias = BasicTensor<T>(Shape{channels});
  p.running_mean = BasicTensor<T>(Shape{channels});
  p.running_var = BasicTensor<T>(Shape{channels}, T(1));
  p.zero_grad();
  return p;
}

template <typename T>
void LayerParams<T>::zero_grad() {
  grad_weight = BasicTensor<T>::zeros_like(weight);
  grad_bias = BasicTensor<T>::zeros_like(bias);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                      std::size_t padding) {
  const Window g = conv_window(input, params, stride, padding);
  const std::size_t batch = input.dim(0), out_ch = params.weight.dim(0);
  BasicTensor<T> out(Shape{batch, out_ch, g.out_h, g.out_w});
  const bool pointwise = g.k == 1 && stride == 1 && padding == 0;
  const ConstMatMap<T> weight(params.weight.ptr(), Eigen::Index(out_ch), Eigen::Index(g.rows()));
  parallel_for(batch, [&](std::size_t n) {
    const T* image = input.ptr() + n * g.channels * g.height * g.width;
    std::vector<T> cols;
    if (!pointwise) {
      cols.resize(g.rows() * g.positions());
      im2col(image, g, cols.data());
    }
    const ConstMatMap<T> x(pointwise ? image : cols.data(), Eigen::Index(g.rows()), Eigen::Index(g.positions()));
    T* dst = out.ptr() + n * out_ch * g.positions();
    MatMap<T> y(dst, Eigen::Index(out_ch), Eigen::Index(g.positions()));
    y.noalias() = weight * x;
    add_channel_bias(dst, params.bias, g.positions());
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                             const BasicTensor<T>& grad_output, std::size_t stride, std::size_t padding) {
  const Window g = conv_window(input, params, stride, padding);
  const std::size_t batch = input.dim(0), out_ch = params.weight.dim(0);
  const Shape expected{batch, out_ch, g.out_h, g.out_w};
  if (grad_output.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_output " + shape_str(grad_output.shape()) + " expected " +
                     shape_str(expected));
  }
  ConvGrads<T> grads;
  grads.input = BasicTensor<T>::zeros_like(input);
  std::vector<std::vector<T>> partials(batch, std::vector<T>(params.weight.size()));
  const ConstMatMap<T> weight(params.weight.ptr(), Eigen::Index(out_ch), Eigen::Index(g.rows()));
  parallel_for(batch, [&](std::size_t n) {
    const std::size_t image_size = g.channels * g.height * g.width;
    std::vector<T> cols(g.rows() * g.positions());
    im2col(input.ptr() + n * image_size, g, cols.data());
    const ConstMatMap<T> x(cols.data(), Eigen::Index(g.rows()), Eigen::Index(g.positions()));
    const ConstMatMap<T> gy(grad_output.ptr() + n * out_ch * g.positions(), Eigen::Index(out_ch),
                            Eigen::Index(g.positions()));
    MatMap<T> gw(partials[n].data(), Eigen::Index(out_ch), Eigen::Index(g.rows()));
    gw.noalias() = gy * x.transpose();
    MatMap<T> gcols(cols.data(), Eigen::Index(g.rows()), Eigen::Index(g.positions()));
    gcols.noalias() = weight.transpose() * gy;
    col2im(cols.data(), g, grads.input.ptr() + n * image_size);
  });
  grads.weight = reduce_partials(partials, params.weight.shape());
  grads.bias = bias_grad(grad_output, !params.bias.empty());
  return grads;
}

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const LayerParams<T>& params, std::size_t stride,
                        std::size_t padding, std::size_t output_padding) {
  const Window g = deconv_window(input, params, stride, padding, output_padding);
  const std::size_t batch = input.dim(0), in_ch = input.dim(1);
  BasicTensor<T> out(Shape{batch, g.channels, g.height, g.width});
  const ConstMatMap<T> weight(params.weight.ptr(), Eigen::Index(in_ch), Eigen::Index(g.rows()));
  parallel_for(batch, [&](std::size_t n) {
    std::vector<T> cols(g.rows() * g.positions());
    const ConstMatMap<T> x(input.ptr() + n * in_ch * g.positions(), Eigen::Index(in_ch),
                           Eigen::Index(g.positions()));
    MatMap<T> c(cols.data(), Eigen::Index(g.rows()), Eigen::Index(g.positions()));
    c.noalias() = weight.transpose() * x;
    T* dst = out.ptr() + n * g.channels * g.height * g.width;
    col2im(cols.data(), g, dst);
    add_channel_bias(dst, params.bias, g.height * g.width);
  });
  return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const BasicTensor<T>& input, const LayerParams<T>& params,
                               const BasicTensor<T>& grad_output, std::size_t stride, std::size_t padding,
                               std::size_t output_padding) {
  const Window g = deconv_window(input, params, stride, padding, output_padding);
  const std::size_t batch = input.dim(0), in_ch = input.dim(1);
  const Shape expected{batch, g.channels, g.height, g.width};
  if (grad_output.shape() != expected) {
    throw ShapeError("deconv2d_backward: grad_output " + shape_str(grad_output.shape()) + " expected " +
                     shape_str(expected));
  }
  ConvGrads<T> grads;
  grads.input = BasicTensor<T>::zeros_like(input);
  std::vector<std::vector<T>> partials(batch, std::vector<T>(params.weight.size()));
  const ConstMatMap<T> weight(params.weight.ptr(), Eigen::Index(in_ch), Eigen::Index(g.rows()));
  parallel_for(batch, [&](std::size_t n) {
    std::vector<T> cols(g.rows() * g.positions());
    im2col(grad_output.ptr() + n * g.channels * g.height * g.width, g, cols.data());
    const ConstMatMap<T> gy(cols.data(), Eigen::Index(g.rows()), Eigen::Index(g.positions()));
    const ConstMatMap<T> x(input.ptr() + n * in_ch * g.positions(), Eigen::Index(in_ch),
                           Eigen::Index(g.positions()));
    MatMap<T> gx(grads.input.ptr() + n * in_ch * g.positions(), Eigen::Index(in_ch), Eigen::Index(g.positions()));
    gx.noalias() = weight * gy;
    MatMap<T> gw(partials[n].data(), Eigen::Index(in_ch), Eigen::Index(g.rows()));
    gw.noalias() = x * gy.transpose();
  });
  grads.weight = reduce_partials(partials, params.weight.shape());
  grads.bias = bias_grad(grad_output, !params.bias.empty());
  return grads;
}

template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, LayerParams<T>& params, BnMode mode, BnCache<T>* cache,
                         double epsilon, double momentum) {
  require_rank(input, 4, "batchnorm");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  require(params.weight.size() == channels && params.running_mean.size() == channels,
          "batchnorm: parameter length does not match " + std::to_string(channels) + " channels");
  const std::size_t count = batch * plane;
  require(count > 0, "batchnorm: empty input");

  BasicTensor<T> out(input.shape());
  BasicTensor<T> normalized(input.shape());
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::kTrain) {
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = input.ptr() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += double(p[i]);
      }
      mean /= double(count);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = input.ptr() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = double(p[i]) - mean;
          var += d * d;
        }
      }
      var /= double(count);
      const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
      params.running_mean[c] = T((1.0 - momentum) * double(params.running_mean[c]) + momentum * mean);
      params.running_var[c] =
          T(std::max((1.0 - momentum) * double(params.running_var[c]) + momentum * unbiased, epsilon));
    } else {
      mean = double(params.running_mean[c]);
      var = double(params.running_var[c]);
    }
    const double istd = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = T(istd);
    const T gamma = params.weight[c], beta = params.bias[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = T((double(input[off + i]) - mean) * istd);
        normalized[off + i] = xh;
        out[off + i] = gamma * xh + beta;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
ConvGrads<T> batchnorm_backward(const BasicTensor<T>& grad_output, const LayerParams<T>& params,
                                const BnCache<T>& cache) {
  require_same_shape(grad_output, cache.normalized, "batchnorm_backward");
  const std::size_t batch = grad_output.dim(0), channels = grad_output.dim(1);
  const std::size_t plane = grad_output.dim(2) * grad_output.dim(3);
  const double count = double(batch * plane);
  ConvGrads<T> grads;
  grads.input = BasicTensor<T>(grad_output.shape());
  grads.weight = BasicTensor<T>(Shape{channels});
  grads.bias = BasicTensor<T>(Shape{channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += double(grad_output[off + i]);
        sum_dy_xh += double(grad_output[off + i]) * double(cache.normalized[off + i]);
      }
    }
    grads.weight[c] = T(sum_dy_xh);
    grads.bias[c] = T(sum_dy);
    const double gamma = double(params.weight[c]);
    const double istd = double(cache.inv_std[c]);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = double(grad_output[off + i]);
        double dx;
        if (cache.mode == BnMode::kTrain) {
          dx = gamma * istd * (dy - sum_dy / count - double(cache.normalized[off + i]) * sum_dy_xh / count);
        } else {
          dx = gamma * istd * dy;
        }
        grads.input[off + i] = T(dx);
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_shape(input, grad_output, "relu_backward");
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? grad_output[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> out = a;
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
double l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
  require_same_shape(prediction, target, "l1_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) acc += std::abs(double(prediction[i]) - double(target[i]));
  return acc;
}

template <typename T>
BasicTensor<T> l1_loss_backward(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
  require_same_shape(prediction, target, "l1_loss_backward");
  BasicTensor<T> g(prediction.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = prediction[i] - target[i];
    g[i] = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
  }
  return g;
}

template <typename T>
void kaiming_init(LayerParams<T>& params, std::size_t fan_in, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / double(std::max<std::size_t>(fan_in, 1))));
  for (auto& w : params.weight.data()) w = T(normal(rng));
  params.bias.fill(T(0));
  params.zero_grad();
}

#define MFSR_INSTANTIATE_OPS(T)                                                                              \
  template struct LayerParams<T>;                                                                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const LayerParams<T>&, std::size_t, std::size_t);    \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const LayerParams<T>&, const BasicTensor<T>&, \
                                        std::size_t, std::size_t);                                           \
  template BasicTensor<T> deconv2d(const BasicTensor<T>&, const LayerParams<T>&, std::size_t, std::size_t,   \
                                   std::size_t);                                                             \
  template ConvGrads<T> deconv2d_backward(const BasicTensor<T>&, const LayerParams<T>&, const BasicTensor<T>&, \
                                          std::size_t, std::size_t, std::size_t);                            \
  template BasicTensor<T> batchnorm(const BasicTensor<T>&, LayerParams<T>&, BnMode, BnCache<T>*, double,     \
                                    double);                                                                 \
  template ConvGrads<T> batchnorm_backward(const BasicTensor<T>&, const LayerParams<T>&, const BnCache<T>&); \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                                         \
  template double l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
  template BasicTensor<T> l1_loss_backward(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template void kaiming_init(LayerParams<T>&, std::size_t, std::mt19937_64&, double);

MFSR_INSTANTIATE_OPS(float)
MFSR_INSTANTIATE_OPS(double)

#undef MFSR_INSTANTIATE_OPS

}  // namespace mfsr
