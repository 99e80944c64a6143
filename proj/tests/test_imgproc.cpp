// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mfsr/imgproc.hpp"
#include "oracles.hpp"

using namespace mfsr;
using namespace mfsr::testing;
namespace fs = std::filesystem;

namespace {

Tensor ramp(std::size_t h, std::size_t w) {
  Tensor t(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) t.at(0, 0, i, j) = (double(i) + 2.0 * double(j)) / double(h + 2 * w);
  return t;
}

}  // namespace

TEST_CASE("bicubic identity resize is bit-exact") {
  const Tensor x = random_tensor({2, 3, 7, 9}, 1);
  CHECK(bicubic_resize(x, 7, 9) == x);
}

TEST_CASE("bicubic keeps constants constant at any scale") {
  const Tensor c(Shape{1, 1, 16, 24}, 0.375);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{2, 3}, {16, 24}, {31, 5}, {128, 192}, {1, 1}}) {
    const Tensor y = bicubic_resize(c, h, w);
    for (double v : y.storage()) CHECK(v == doctest::Approx(0.375).epsilon(1e-14));
  }
}

TEST_CASE("bicubic 8x down then up reproduces a smooth ramp") {
  const Tensor r = ramp(96, 96);
  const Tensor back = bicubic_resize(bicubic_resize(r, 12, 12), 96, 96);
  double mae = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) mae += std::abs(r[i] - back[i]);
  CHECK(mae / double(r.size()) < 1e-2);
}

TEST_CASE("bicubic upsampling interpolates a linear ramp away from the borders") {
  // The a = -0.5 kernel reproduces linear functions exactly where no tap is clamped.
  Tensor x(Shape{1, 1, 1, 12});
  for (std::size_t j = 0; j < 12; ++j) x[j] = 0.1 * double(j);
  const Tensor y = bicubic_resize(x, 1, 24);
  for (std::size_t j = 4; j < 20; ++j) {
    const double src = (double(j) + 0.5) / 2.0 - 0.5;
    CHECK(y[j] == doctest::Approx(0.1 * src).epsilon(1e-12));
  }
}

TEST_CASE("rgb_to_y") {
  const auto y_of = [](double r, double g, double b) {
    Tensor t(Shape{1, 3, 1, 1}, std::vector<double>{r, g, b});
    return rgb_to_y(t)[0];
  };
  CHECK(y_of(1, 1, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y_of(0, 0, 0) == 0.0);
  CHECK(y_of(1, 0, 0) == doctest::Approx(0.299));
  CHECK(y_of(0, 1, 0) == doctest::Approx(0.587));
  CHECK(y_of(0, 0, 1) == doctest::Approx(0.114));
  CHECK_THROWS_AS(rgb_to_y(Tensor(Shape{1, 2, 2, 2})), ShapeError);
}

TEST_CASE("psnr") {
  SUBCASE("closed form") {
    const Tensor a(Shape{1, 1, 20, 20}, 0.5), b(Shape{1, 1, 20, 20}, 0.6);
    CHECK(psnr(a, b, 0) == doctest::Approx(20.0).epsilon(1e-12));
  }
  SUBCASE("identical images give +infinity") {
    const Tensor a = random_tensor({1, 1, 20, 20}, 3, 0, 1);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
  }
  SUBCASE("matches the scalar loop") {
    const Tensor a = random_tensor({1, 1, 40, 36}, 4, 0, 1), b = random_tensor({1, 1, 40, 36}, 5, 0, 1);
    CHECK(std::abs(psnr(a, b, 8) - naive_psnr(a, b, 8)) < 1e-10);
    CHECK(std::abs(psnr(a, b, 0) - naive_psnr(a, b, 0)) < 1e-10);
  }
  SUBCASE("symmetric") {
    const Tensor a = random_tensor({1, 1, 30, 30}, 6, 0, 1), b = random_tensor({1, 1, 30, 30}, 7, 0, 1);
    CHECK(psnr(a, b) == psnr(b, a));
  }
  SUBCASE("strictly decreasing in noise amplitude") {
    const Tensor a = random_tensor({1, 1, 48, 48}, 8, 0.2, 0.8), noise = random_tensor({1, 1, 48, 48}, 9);
    double last = std::numeric_limits<double>::infinity();
    for (double amp : {0.01, 0.05, 0.2}) {
      Tensor b = a;
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += amp * noise[i];
      const double p = psnr(a, b);
      CHECK(p < last);
      last = p;
    }
  }
  SUBCASE("mismatched shapes are rejected") {
    CHECK_THROWS_AS(psnr(Tensor(Shape{1, 1, 20, 20}), Tensor(Shape{1, 1, 20, 21})), ShapeError);
  }
}

TEST_CASE("ssim") {
  const Tensor a = random_tensor({1, 1, 40, 44}, 11, 0, 1), b = random_tensor({1, 1, 40, 44}, 12, 0, 1);
  SUBCASE("identical images score 1") { CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12)); }
  SUBCASE("matches the per-window oracle") {
    CHECK(std::abs(ssim(a, b, 8) - naive_ssim(a, b, 8)) < 1e-8);
    CHECK(std::abs(ssim(a, b, 0) - naive_ssim(a, b, 0)) < 1e-8);
  }
  SUBCASE("symmetric") { CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14)); }
  SUBCASE("a luminance shift lowers the score but keeps it positive") {
    Tensor s = random_tensor({1, 1, 40, 44}, 13, 0.2, 0.5);
    Tensor shifted = s;
    for (auto& v : shifted.storage()) v += 0.3;
    const double score = ssim(s, shifted);
    CHECK(score < 1.0);
    CHECK(score > 0.0);
  }
  SUBCASE("too small after the crop") { CHECK_THROWS(ssim(Tensor(Shape{1, 1, 20, 20}), Tensor(Shape{1, 1, 20, 20}), 8)); }
  SUBCASE("gaussian window is normalized") {
    const auto g = gaussian_window(kSsimWindow, kSsimSigma);
    double s = 0.0;
    for (double v : g) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(g[5] > g[4]);
    CHECK(g[0] == doctest::Approx(g[10]).epsilon(1e-15));
  }
}

TEST_CASE("netpbm round trip") {
  const fs::path dir = fs::temp_directory_path() / "mfsr_test_imgproc";
  fs::create_directories(dir);
  SUBCASE("16-bit grey keeps 1/65535 resolution") {
    const Tensor t = random_tensor({1, 1, 9, 13}, 21, 0, 1);
    write_image(dir / "t.pgm", t, 16);
    const Tensor r = read_image(dir / "t.pgm");
    REQUIRE(r.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(r[i] - t[i]) <= 0.5 / 65535.0 + 1e-15);
  }
  SUBCASE("8-bit colour") {
    const Tensor c = random_tensor({1, 3, 5, 6}, 22, 0, 1);
    write_image(dir / "c.ppm", c, 8);
    const Tensor r = read_image(dir / "c.ppm");
    REQUIRE(r.shape() == c.shape());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(r[i] - c[i]) <= 0.5 / 255.0 + 1e-15);
  }
  SUBCASE("values are clamped to [0,1]") {
    write_image(dir / "clamp.pgm", Tensor(Shape{1, 1, 1, 2}, std::vector<double>{-0.5, 1.5}), 8);
    const Tensor r = read_image(dir / "clamp.pgm");
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 1.0);
  }
  SUBCASE("malformed files are reported") {
    std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
    CHECK_THROWS(read_image(dir / "bad.pgm"));
    CHECK_THROWS(read_image(dir / "missing.pgm"));
  }
}
