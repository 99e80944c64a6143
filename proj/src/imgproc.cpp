// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/imgproc.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace mfsr {
namespace {

double cubic(double x) {
  constexpr double a = kBicubicA;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<std::size_t> offset;   // first entry into index/weight per output sample
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

Taps resample_taps(std::size_t in, std::size_t out) {
  const double scale = double(out) / double(in);
  const double kernel_scale = std::min(1.0, scale);
  const double support = 2.0 / kernel_scale;
  Taps taps;
  taps.offset.reserve(out + 1);
  for (std::size_t o = 0; o < out; ++o) {
    taps.offset.push_back(taps.index.size());
    const double center = (double(o) + 0.5) / scale - 0.5;
    const long long lo = static_cast<long long>(std::ceil(center - support));
    const long long hi = static_cast<long long>(std::floor(center + support));
    double sum = 0.0;
    const std::size_t first = taps.weight.size();
    for (long long j = lo; j <= hi; ++j) {
      const double w = cubic((center - double(j)) * kernel_scale);
      if (w == 0.0) continue;
      const long long clamped = std::clamp<long long>(j, 0, static_cast<long long>(in) - 1);
      taps.index.push_back(static_cast<std::size_t>(clamped));
      taps.weight.push_back(w);
      sum += w;
    }
    for (std::size_t i = first; i < taps.weight.size(); ++i) taps.weight[i] /= sum;
  }
  taps.offset.push_back(taps.index.size());
  return taps;
}

template <typename T>
void check_pair(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t crop, const char* what) {
  require_rank(a, 4, what);
  require_same_shape(a, b, what);
  if (a.dim(2) <= 2 * crop || a.dim(3) <= 2 * crop) {
    throw ShapeError(std::string(what) + ": border crop " + std::to_string(crop) + " leaves no pixels of " +
                     shape_str(a.shape()));
  }
}

void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_pnm_int(std::istream& in, const std::filesystem::path& path) {
  skip_pnm_space(in);
  std::size_t v = 0;
  if (!(in >> v)) throw std::runtime_error("malformed netpbm header: " + path.string());
  return v;
}

}  // namespace

template <typename T>
BasicTensor<T> bicubic_resize(const BasicTensor<T>& image, std::size_t out_h, std::size_t out_w) {
  require_rank(image, 4, "bicubic_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bicubic_resize: output extents must be positive");
  const std::size_t planes = image.dim(0) * image.dim(1);
  const std::size_t in_h = image.dim(2), in_w = image.dim(3);
  const Taps tx = resample_taps(in_w, out_w);
  const Taps ty = resample_taps(in_h, out_h);
  BasicTensor<T> out(Shape{image.dim(0), image.dim(1), out_h, out_w});
  std::vector<double> rows(in_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = image.ptr() + p * in_h * in_w;
    for (std::size_t y = 0; y < in_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = tx.offset[x]; t < tx.offset[x + 1]; ++t) acc += tx.weight[t] * double(src[y * in_w + tx.index[t]]);
        rows[y * out_w + x] = acc;
      }
    }
    T* dst = out.ptr() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = ty.offset[y]; t < ty.offset[y + 1]; ++t) acc += ty.weight[t] * rows[ty.index[t] * out_w + x];
        dst[y * out_w + x] = T(acc);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> rgb_to_y(const BasicTensor<T>& rgb) {
  require_rank(rgb, 4, "rgb_to_y");
  if (rgb.dim(1) != 3) throw ShapeError("rgb_to_y: expected 3 channels, got " + shape_str(rgb.shape()));
  const std::size_t plane = rgb.dim(2) * rgb.dim(3);
  BasicTensor<T> y(Shape{rgb.dim(0), 1, rgb.dim(2), rgb.dim(3)});
  for (std::size_t n = 0; n < rgb.dim(0); ++n) {
    const T* r = rgb.ptr() + n * 3 * plane;
    const T* g = r + plane;
    const T* b = g + plane;
    T* out = y.ptr() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = T(0.299 * double(r[i]) + 0.587 * double(g[i]) + 0.114 * double(b[i]));
    }
  }
  return y;
}

template <typename T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t border_crop) {
  check_pair(a, b, border_crop, "psnr");
  const std::size_t planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = border_crop; y < h - border_crop; ++y) {
      for (std::size_t x = border_crop; x < w - border_crop; ++x) {
        const std::size_t i = (p * h + y) * w + x;
        const double d = double(a[i]) - double(b[i]);
        sse += d * d;
        ++count;
      }
    }
  }
  const double mse = sse / double(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (double(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    g[i] = std::exp(-(double(i) - c) * (double(i) - c) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

template <typename T>
double ssim(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t border_crop) {
  check_pair(a, b, border_crop, "ssim");
  const std::size_t h = a.dim(2) - 2 * border_crop, w = a.dim(3) - 2 * border_crop;
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim: cropped image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the 11x11 window");
  }
  const auto g = gaussian_window(kSsimWindow, kSsimSigma);
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  const std::size_t planes = a.dim(0) * a.dim(1);
  // Five moment maps filtered horizontally then vertically ("valid" region only).
  std::vector<double> horiz(5 * h * ow);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    auto px = [&](const BasicTensor<T>& t, std::size_t y, std::size_t x) {
      return double(t[(p * a.dim(2) + y + border_crop) * a.dim(3) + x + border_crop]);
    };
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double m[5] = {0, 0, 0, 0, 0};
        for (std::size_t k = 0; k < kSsimWindow; ++k) {
          const double va = px(a, y, x + k), vb = px(b, y, x + k);
          m[0] += g[k] * va;
          m[1] += g[k] * vb;
          m[2] += g[k] * va * va;
          m[3] += g[k] * vb * vb;
          m[4] += g[k] * va * vb;
        }
        for (int j = 0; j < 5; ++j) horiz[(std::size_t(j) * h + y) * ow + x] = m[j];
      }
    }
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double m[5] = {0, 0, 0, 0, 0};
        for (std::size_t k = 0; k < kSsimWindow; ++k) {
          for (int j = 0; j < 5; ++j) m[j] += g[k] * horiz[(std::size_t(j) * h + y + k) * ow + x];
        }
        const double mu_a = m[0], mu_b = m[1];
        const double var_a = m[2] - mu_a * mu_a, var_b = m[3] - mu_b * mu_b, cov = m[4] - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
    }
  }
  return total / double(planes * oh * ow);
}

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw std::runtime_error("unsupported image format (expected binary PGM/PPM): " + path.string());
  }
  const std::size_t width = read_pnm_int(in, path);
  const std::size_t height = read_pnm_int(in, path);
  const std::size_t maxval = read_pnm_int(in, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw std::runtime_error("invalid netpbm header: " + path.string());
  }
  in.get();  // single whitespace before raster
  const bool wide = maxval > 255;
  std::vector<unsigned char> raw(width * height * channels * (wide ? 2 : 1));
  if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()))) {
    throw std::runtime_error("truncated image raster: " + path.string());
  }
  Tensor image(Shape{1, channels, height, width});
  const std::size_t plane = width * height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t s = i * channels + c;
      const double v = wide ? double((raw[2 * s] << 8) | raw[2 * s + 1]) : double(raw[s]);
      image[c * plane + i] = v / double(maxval);
    }
  }
  return image;
}

void write_image(const std::filesystem::path& path, const Tensor& image, int bits) {
  require_rank(image, 4, "write_image");
  const std::size_t channels = image.dim(1), height = image.dim(2), width = image.dim(3);
  if (image.dim(0) != 1 || (channels != 1 && channels != 3)) {
    throw ShapeError("write_image: expected [1,1|3,H,W], got " + shape_str(image.shape()));
  }
  if (bits != 8 && bits != 16) throw std::invalid_argument("write_image: bits must be 8 or 16");
  if (channels == 3 && bits != 8) throw std::invalid_argument("write_image: color output is 8-bit only");
  const unsigned maxval = bits == 8 ? 255u : 65535u;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << '\n' << maxval << '\n';
  const std::size_t plane = width * height;
  std::vector<unsigned char> raw;
  raw.reserve(plane * channels * (bits / 8));
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp(image[c * plane + i], 0.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround(v * maxval));
      if (bits == 16) raw.push_back(static_cast<unsigned char>(q >> 8));
      raw.push_back(static_cast<unsigned char>(q & 0xff));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path.string());
}

template BasicTensor<float> bicubic_resize(const BasicTensor<float>&, std::size_t, std::size_t);
template BasicTensor<double> bicubic_resize(const BasicTensor<double>&, std::size_t, std::size_t);
template BasicTensor<float> rgb_to_y(const BasicTensor<float>&);
template BasicTensor<double> rgb_to_y(const BasicTensor<double>&);
template double psnr(const BasicTensor<float>&, const BasicTensor<float>&, std::size_t);
template double psnr(const BasicTensor<double>&, const BasicTensor<double>&, std::size_t);
template double ssim(const BasicTensor<float>&, const BasicTensor<float>&, std::size_t);
template double ssim(const BasicTensor<double>&, const BasicTensor<double>&, std::size_t);

}  // namespace mfsr
