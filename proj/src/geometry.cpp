// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/geometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfsr {
namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

constexpr double kOcclusionTolerance = 0.02;  // relative depth slack of the thermal z-buffer
constexpr double kThermalHuber = 0.02;         // intensity units
constexpr double kGeometricHuber = 0.01;       // meters

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

// Accepts [H,W] or [1,1,H,W]; returns (height, width).
std::pair<std::size_t, std::size_t> plane_extent(const Tensor& t, const char* what) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) return {t.dim(2), t.dim(3)};
  throw ShapeError(std::string(what) + ": expected a single image plane, got " + shape_str(t.shape()));
}

}  // namespace

// ---- CameraIntrinsics --------------------------------------------------------

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera focal lengths must be positive");
  if (width == 0 || height == 0) throw std::invalid_argument("camera resolution must be positive");
  if (cx < 0 || cx >= double(width) || cy < 0 || cy >= double(height)) {
    throw std::invalid_argument("camera principal point must lie inside the image");
  }
}

Eigen::Vector2d CameraIntrinsics::project(const Eigen::Vector3d& p) const {
  return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

Eigen::Vector3d CameraIntrinsics::ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

bool CameraIntrinsics::contains(double u, double v) const {
  return u >= -0.5 && v >= -0.5 && u < double(width) - 0.5 && v < double(height) - 0.5;
}

CameraIntrinsics CameraIntrinsics::scaled(std::size_t new_width, std::size_t new_height) const {
  const double sx = double(new_width) / double(width), sy = double(new_height) / double(height);
  CameraIntrinsics k = *this;
  k.fx = fx * sx;
  k.fy = fy * sy;
  // Pixel centers sit at integers, so the edge of the image is at -0.5.
  k.cx = (cx + 0.5) * sx - 0.5;
  k.cy = (cy + 0.5) * sy - 0.5;
  k.width = new_width;
  k.height = new_height;
  return k;
}

// ---- PoseSE3 ------------------------------------------------------------------

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Eigen::Matrix3d::Identity() + skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

PoseSE3::PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  if (!(ortho < 1e-6) || !(rotation.determinant() > 0) || !translation.allFinite()) {
    throw std::invalid_argument("PoseSE3: rotation is not a proper orthonormal matrix");
  }
}

PoseSE3 PoseSE3::from_twist(const Vec6& twist) {
  PoseSE3 p;
  p.rotation_ = so3_exp(twist.head<3>());
  p.translation_ = twist.tail<3>();
  return p;
}

PoseSE3 PoseSE3::from_axis_angle(const Eigen::Vector3d& axis_angle, const Eigen::Vector3d& translation) {
  PoseSE3 p;
  p.rotation_ = so3_exp(axis_angle);
  p.translation_ = translation;
  return p;
}

PoseSE3 PoseSE3::from_row_major(const std::vector<double>& values) {
  if (values.size() != 12) throw std::invalid_argument("PoseSE3: expected 12 row-major values");
  Eigen::Matrix3d r;
  Eigen::Vector3d t;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = values[std::size_t(i * 4 + j)];
    t(i) = values[std::size_t(i * 4 + 3)];
  }
  return {r, t};
}

PoseSE3 PoseSE3::operator*(const PoseSE3& other) const {
  PoseSE3 p;
  p.rotation_ = rotation_ * other.rotation_;
  p.translation_ = rotation_ * other.translation_ + translation_;
  return p;
}

PoseSE3 PoseSE3::inverse() const {
  PoseSE3 p;
  p.rotation_ = rotation_.transpose();
  p.translation_ = -(p.rotation_ * translation_);
  return p;
}

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

std::vector<double> PoseSE3::row_major() const {
  std::vector<double> v;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) v.push_back(rotation_(i, j));
    v.push_back(translation_(i));
  }
  return v;
}

double PoseSE3::angle_between(const PoseSE3& a, const PoseSE3& b) {
  const Eigen::Matrix3d rel = a.rotation_.transpose() * b.rotation_;
  return Eigen::AngleAxisd(rel).angle();
}

// ---- sampling helpers ------------------------------------------------------------

std::optional<double> sample_bilinear(const Tensor& image, std::size_t plane, double u, double v) {
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  if (!(u >= 0.0) || !(v >= 0.0) || u > double(w - 1) || v > double(h - 1)) return std::nullopt;
  const std::size_t u0 = std::min(std::size_t(u), w > 1 ? w - 2 : 0);
  const std::size_t v0 = std::min(std::size_t(v), h > 1 ? h - 2 : 0);
  const double a = u - double(u0), b = v - double(v0);
  const double* p = image.ptr() + plane * h * w;
  const std::size_t u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
  return (1 - a) * (1 - b) * p[v0 * w + u0] + a * (1 - b) * p[v0 * w + u1] + (1 - a) * b * p[v1 * w + u0] +
         a * b * p[v1 * w + u1];
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (sigma <= 0.0) return image;
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t planes = image.size() / (h * w);
  const long radius = long(std::ceil(3.0 * sigma));
  std::vector<double> taps(std::size_t(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += taps[std::size_t(i + radius)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
  for (auto& t : taps) t /= total;
  Tensor tmp(image.shape()), out(image.shape());
  const auto clamp = [](long x, std::size_t n) { return std::size_t(std::clamp<long>(x, 0, long(n) - 1)); };
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = image.ptr() + p * h * w;
    double* mid = tmp.ptr() + p * h * w;
    double* dst = out.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) acc += taps[std::size_t(i + radius)] * src[y * w + clamp(long(x) + i, w)];
        mid[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) acc += taps[std::size_t(i + radius)] * mid[clamp(long(y) + i, h) * w + x];
        dst[y * w + x] = acc;
      }
  }
  return out;
}

// ---- thermal displacement ----------------------------------------------------------

double thermal_consistency_energy(const Tensor& prev, const Tensor& curr, Displacement2D u) {
  const auto [h, w] = plane_extent(prev, "thermal_consistency_energy");
  if (plane_extent(curr, "thermal_consistency_energy") != std::pair{h, w}) {
    throw ShapeError("thermal_consistency_energy: images differ in size");
  }
  // x ranges over pixels of prev whose shifted position x + u lies inside curr.
  const long x0 = std::max(0L, -long(u.du)), x1 = std::min(long(w), long(w) - u.du);
  const long y0 = std::max(0L, -long(u.dv)), y1 = std::min(long(h), long(h) - u.dv);
  if (x0 >= x1 || y0 >= y1) throw std::invalid_argument("thermal_consistency_energy: displacement leaves no overlap");
  const double* a = prev.ptr();
  const double* b = curr.ptr();
  double sum = 0.0;
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      const double d = b[std::size_t((y + u.dv) * long(w) + x + u.du)] - a[std::size_t(y * long(w) + x)];
      sum += d * d;
    }
  return sum / double((x1 - x0) * (y1 - y0));
}

Displacement2D estimate_displacement(const Tensor& prev, const Tensor& curr, int radius) {
  if (radius < 1) throw std::invalid_argument("estimate_displacement: radius must be >= 1");
  Displacement2D best;
  double best_energy = std::numeric_limits<double>::infinity();
  const auto norm2 = [](Displacement2D d) { return d.du * d.du + d.dv * d.dv; };
  for (int du = -radius; du <= radius; ++du)
    for (int dv = -radius; dv <= radius; ++dv) {
      const Displacement2D cand{du, dv};
      const double e = thermal_consistency_energy(prev, curr, cand);
      // Iteration is lexicographic, so on equal energy and norm the earlier
      // candidate is already the lexicographically smaller one.
      if (e < best_energy || (e == best_energy && norm2(cand) < norm2(best))) {
        best_energy = e;
        best = cand;
      }
    }
  return best;
}

// ---- projection ------------------------------------------------------------------------

std::optional<Eigen::Vector3d> backproject(double u, double v, double depth, const CameraIntrinsics& k) {
  if (!(depth > 0.0) || !std::isfinite(depth)) return std::nullopt;
  return depth * k.ray(u, v);
}

std::optional<Eigen::Vector2d> project_to_thermal(const Eigen::Vector3d& p_visible, const PoseSE3& pose_thermal,
                                                  const PoseSE3& pose_visible, const CameraIntrinsics& k_thermal) {
  const Eigen::Vector3d q = pose_thermal.inverse() * (pose_visible * p_visible);
  if (!(q.z() > 0.0)) return std::nullopt;
  return k_thermal.project(q);
}

double pose_distance(const PoseSE3& a, const PoseSE3& b) {
  return (a.translation() - b.translation()).norm() + kRotationWeight * PoseSE3::angle_between(a, b);
}

std::vector<std::size_t> select_frame_pair(const std::vector<PoseSE3>& trajectory_visible,
                                           const std::vector<PoseSE3>& trajectory_thermal) {
  if (trajectory_visible.empty() || trajectory_thermal.empty()) {
    throw std::invalid_argument("select_frame_pair: empty trajectory");
  }
  std::vector<std::size_t> pairs;
  pairs.reserve(trajectory_thermal.size());
  for (const auto& t : trajectory_thermal) {
    std::size_t best = 0;
    double best_d = pose_distance(trajectory_visible[0], t);
    for (std::size_t i = 1; i < trajectory_visible.size(); ++i) {
      const double d = pose_distance(trajectory_visible[i], t);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    pairs.push_back(best);
  }
  return pairs;
}

// ---- rendering -------------------------------------------------------------------------

AlignedVisible render_aligned_visible(const Tensor& visible, const Tensor& depth, const CameraIntrinsics& k_visible,
                                      const PoseSE3& pose_visible, const CameraIntrinsics& k_thermal,
                                      const PoseSE3& pose_thermal, double discontinuity) {
  require_rank(visible, 4, "render_aligned_visible");
  require_rank(depth, 4, "render_aligned_visible");
  const std::size_t c = visible.dim(1), h = visible.dim(2), w = visible.dim(3);
  if (depth.dim(2) != h || depth.dim(3) != w || depth.dim(1) != 1) {
    throw ShapeError("render_aligned_visible: depth " + shape_str(depth.shape()) + " does not match visible " +
                     shape_str(visible.shape()));
  }
  if (k_visible.width != w || k_visible.height != h) {
    throw std::invalid_argument("render_aligned_visible: visible intrinsics do not match the image size");
  }
  const std::size_t th = k_thermal.height, tw = k_thermal.width;
  const PoseSE3 to_thermal = pose_thermal.inverse() * pose_visible;

  // Per visible pixel: thermal-plane position and thermal-frame depth.
  std::vector<Eigen::Vector2d> proj(h * w);
  std::vector<double> zt(h * w, 0.0), zv(h * w, 0.0);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      const auto p = backproject(double(u), double(v), depth[v * w + u], k_visible);
      if (!p) continue;
      const Eigen::Vector3d q = to_thermal * *p;
      if (!(q.z() > 0.0)) continue;
      zv[v * w + u] = p->z();
      zt[v * w + u] = q.z();
      proj[v * w + u] = k_thermal.project(q);
    }

  AlignedVisible out;
  out.image = Tensor(Shape{1, c, th, tw});
  out.mask = Tensor(Shape{1, 1, th, tw});
  out.source_coords = Tensor(Shape{1, 2, th, tw});
  std::vector<double> zbuf(th * tw, std::numeric_limits<double>::infinity());
  const std::size_t plane = th * tw;

  const auto raster = [&](const std::size_t (&idx)[3]) {
    double zmin = zv[idx[0]], zmax = zv[idx[0]];
    for (const auto i : idx) {
      if (zt[i] <= 0.0) return;
      zmin = std::min(zmin, zv[i]);
      zmax = std::max(zmax, zv[i]);
    }
    if (zmax - zmin > discontinuity * zmin) return;
    const Eigen::Vector2d &a = proj[idx[0]], &b = proj[idx[1]], &d = proj[idx[2]];
    const double area = (b.x() - a.x()) * (d.y() - a.y()) - (b.y() - a.y()) * (d.x() - a.x());
    if (std::abs(area) < 1e-12) return;
    const double eps = 1e-9;
    const long x0 = std::max(0L, long(std::ceil(std::min({a.x(), b.x(), d.x()}) - eps)));
    const long x1 = std::min(long(tw) - 1, long(std::floor(std::max({a.x(), b.x(), d.x()}) + eps)));
    const long y0 = std::max(0L, long(std::ceil(std::min({a.y(), b.y(), d.y()}) - eps)));
    const long y1 = std::min(long(th) - 1, long(std::floor(std::max({a.y(), b.y(), d.y()}) + eps)));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double px = double(x), py = double(y);
        // Screen-space barycentrics.
        double l1 = ((px - a.x()) * (d.y() - a.y()) - (py - a.y()) * (d.x() - a.x())) / area;
        double l2 = ((b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x())) / area;
        double l0 = 1.0 - l1 - l2;
        if (l0 < -eps || l1 < -eps || l2 < -eps) continue;
        // Perspective-correct weights.
        const double w0 = l0 / zt[idx[0]], w1 = l1 / zt[idx[1]], w2 = l2 / zt[idx[2]];
        const double inv_z = w0 + w1 + w2;
        const double z = 1.0 / inv_z;
        const std::size_t t = std::size_t(y) * tw + std::size_t(x);
        if (!(z < zbuf[t])) continue;
        zbuf[t] = z;
        const double b0 = w0 * z, b1 = w1 * z, b2 = w2 * z;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* src = visible.ptr() + ch * h * w;
          out.image[ch * plane + t] = b0 * src[idx[0]] + b1 * src[idx[1]] + b2 * src[idx[2]];
        }
        const auto su = [&](std::size_t i) { return double(i % w); };
        const auto sv = [&](std::size_t i) { return double(i / w); };
        out.source_coords[t] = b0 * su(idx[0]) + b1 * su(idx[1]) + b2 * su(idx[2]);
        out.source_coords[plane + t] = b0 * sv(idx[0]) + b1 * sv(idx[1]) + b2 * sv(idx[2]);
        out.mask[t] = 1.0;
      }
  };

  for (std::size_t v = 0; v + 1 < h; ++v)
    for (std::size_t u = 0; u + 1 < w; ++u) {
      const std::size_t i00 = v * w + u, i10 = i00 + 1, i01 = i00 + w, i11 = i01 + 1;
      raster({i00, i10, i01});
      raster({i10, i11, i01});
    }

  std::size_t filled = 0;
  for (std::size_t t = 0; t < plane; ++t) filled += out.mask[t] > 0.0;
  out.coverage = double(filled) / double(plane);
  out.low_coverage = out.coverage < 0.2;
  return out;
}

// ---- pose refinement -------------------------------------------------------------------

namespace {

struct DepthPoints {
  std::vector<Eigen::Vector3d> points;  // per pixel; valid where valid[i]
  std::vector<Eigen::Vector3d> normals;
  std::vector<char> valid;
  std::vector<char> has_normal;
};

DepthPoints depth_points(const Tensor& depth, const CameraIntrinsics& k) {
  const std::size_t h = depth.dim(2), w = depth.dim(3);
  DepthPoints d;
  d.points.assign(h * w, Eigen::Vector3d::Zero());
  d.normals.assign(h * w, Eigen::Vector3d::Zero());
  d.valid.assign(h * w, 0);
  d.has_normal.assign(h * w, 0);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u)
      if (const auto p = backproject(double(u), double(v), depth[v * w + u], k)) {
        d.points[v * w + u] = *p;
        d.valid[v * w + u] = 1;
      }
  const auto close = [&](std::size_t i, std::size_t j) {
    return d.valid[j] && std::abs(d.points[i].z() - d.points[j].z()) < 0.05 * d.points[i].z();
  };
  for (std::size_t v = 1; v + 1 < h; ++v)
    for (std::size_t u = 1; u + 1 < w; ++u) {
      const std::size_t i = v * w + u;
      if (!d.valid[i] || !close(i, i - 1) || !close(i, i + 1) || !close(i, i - w) || !close(i, i + w)) continue;
      const Eigen::Vector3d n = (d.points[i + 1] - d.points[i - 1]).cross(d.points[i + w] - d.points[i - w]);
      if (n.norm() < 1e-12) continue;
      d.normals[i] = n.normalized();
      d.has_normal[i] = 1;
    }
  return d;
}

struct ThermalPlane {
  Tensor image, grad_u, grad_v;
};

ThermalPlane thermal_plane(const Tensor& thermal, double sigma) {
  ThermalPlane t;
  t.image = gaussian_blur(thermal, sigma);
  const std::size_t h = thermal.dim(2), w = thermal.dim(3);
  t.grad_u = Tensor(thermal.shape());
  t.grad_v = Tensor(thermal.shape());
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      const std::size_t ul = u ? u - 1 : u, ur = u + 1 < w ? u + 1 : u;
      const std::size_t vu = v ? v - 1 : v, vd = v + 1 < h ? v + 1 : v;
      t.grad_u[v * w + u] = (t.image[v * w + ur] - t.image[v * w + ul]) / double(ur - ul);
      t.grad_v[v * w + u] = (t.image[vd * w + u] - t.image[vu * w + u]) / double(vd - vu);
    }
  return t;
}

// Thermal-camera z-buffer of a depth map: nearest thermal-frame depth per
// thermal pixel, used to drop depth points the thermal camera cannot see.
std::vector<double> thermal_zbuffer(const DepthPoints& d, const PoseSE3& to_thermal, const CameraIntrinsics& k) {
  std::vector<double> z(k.width * k.height, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < d.points.size(); ++i) {
    if (!d.valid[i]) continue;
    const Eigen::Vector3d a = to_thermal * d.points[i];
    if (!(a.z() > 0.0)) continue;
    const Eigen::Vector2d x = k.project(a);
    const long u = std::lround(x.x()), v = std::lround(x.y());
    if (u < 0 || v < 0 || u >= long(k.width) || v >= long(k.height)) continue;
    double& cell = z[std::size_t(v) * k.width + std::size_t(u)];
    cell = std::min(cell, a.z());
  }
  return z;
}

bool thermally_visible(const std::vector<double>& zbuf, const CameraIntrinsics& k, const Eigen::Vector2d& x,
                       double z) {
  const long u = std::lround(x.x()), v = std::lround(x.y());
  if (u < 0 || v < 0 || u >= long(k.width) || v >= long(k.height)) return false;
  return z <= zbuf[std::size_t(v) * k.width + std::size_t(u)] * (1.0 + kOcclusionTolerance);
}

// Huber cost scaled so that it equals r^2 inside the quadratic zone.
double huber_cost(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? r * r : delta * (2.0 * a - delta);
}

double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

struct Linearization {
  Mat6 hessian = Mat6::Zero();
  Vec6 gradient = Vec6::Zero();
  double energy = 0.0;
  std::size_t associations = 0;
};

class PoseProblem {
 public:
  PoseProblem(const MultiModalFrame& prev, const MultiModalFrame& curr, const RigCalibration& rig)
      : rig_(rig),
        prev_(depth_points(prev.depth, rig.visible)),
        curr_(depth_points(curr.depth, rig.visible)),
        to_thermal_(rig.visible_to_thermal_offset.inverse()),
        prev_thermal_raw_(prev.thermal),
        curr_thermal_raw_(curr.thermal),
        prev_zbuf_(thermal_zbuffer(prev_, to_thermal_, rig.thermal)),
        curr_zbuf_(thermal_zbuffer(curr_, to_thermal_, rig.thermal)) {
    rig.visible.validate();
    rig.thermal.validate();
    if (prev.depth.dim(2) != rig.visible.height || prev.depth.dim(3) != rig.visible.width ||
        curr.depth.shape() != prev.depth.shape()) {
      throw ShapeError("refine_pose: depth maps must match the visible intrinsics");
    }
    if (prev.thermal.shape() != curr.thermal.shape() || prev.thermal.dim(2) != rig.thermal.height ||
        prev.thermal.dim(3) != rig.thermal.width) {
      throw ShapeError("refine_pose: thermal images must match the thermal intrinsics");
    }
  }

  void set_level(double sigma, double max_distance) {
    prev_thermal_ = thermal_plane(prev_thermal_raw_, sigma);
    curr_thermal_ = gaussian_blur(curr_thermal_raw_, sigma);
    max_distance_ = max_distance;
  }

  // With `lin` null only the energy is evaluated.
  double evaluate(const PoseSE3& pose, double omega, Linearization* lin) const {
    const std::size_t h = rig_.visible.height, w = rig_.visible.width;
    double energy = 0.0;
    std::size_t count = 0;
    Mat6 hess = Mat6::Zero();
    Vec6 grad = Vec6::Zero();
    Eigen::Matrix<double, 1, 6> j;
    for (std::size_t i = 0; i < h * w; ++i) {
      if (!curr_.valid[i]) continue;
      const Eigen::Vector3d q = pose * curr_.points[i];
      if (!(q.z() > 0.0)) continue;

      // Point-to-plane term with projective association into the previous depth map.
      const Eigen::Vector2d x = rig_.visible.project(q);
      const long pu = std::lround(x.x()), pv = std::lround(x.y());
      if (pu >= 0 && pv >= 0 && pu < long(w) && pv < long(h)) {
        const std::size_t k = std::size_t(pv) * w + std::size_t(pu);
        if (prev_.has_normal[k] && (q - prev_.points[k]).norm() < max_distance_) {
          const Eigen::Vector3d& n = prev_.normals[k];
          const double r = n.dot(q - prev_.points[k]);
          const double wg = huber_weight(r, kGeometricHuber);
          energy += huber_cost(r, kGeometricHuber);
          ++count;
          if (lin) {
            j << q.cross(n).transpose(), n.transpose();
            hess.noalias() += wg * j.transpose() * j;
            grad.noalias() += wg * j.transpose() * r;
          }
        }
      }

      // Thermal photo-consistency: the same surface point seen by both thermal views.
      if (omega <= 0.0) continue;
      const Eigen::Vector3d a = to_thermal_ * curr_.points[i];
      const Eigen::Vector3d b = to_thermal_ * q;
      if (!(a.z() > 0.0) || !(b.z() > 0.0)) continue;
      const Eigen::Vector2d xa = rig_.thermal.project(a), xb = rig_.thermal.project(b);
      if (!thermally_visible(curr_zbuf_, rig_.thermal, xa, a.z()) ||
          !thermally_visible(prev_zbuf_, rig_.thermal, xb, b.z())) {
        continue;
      }
      const auto ic = sample_bilinear(curr_thermal_, 0, xa.x(), xa.y());
      const auto ip = sample_bilinear(prev_thermal_.image, 0, xb.x(), xb.y());
      if (!ic || !ip) continue;
      const double r = *ip - *ic;
      const double wt = huber_weight(r, kThermalHuber);
      energy += omega * huber_cost(r, kThermalHuber);
      if (lin) {
        const double gu = *sample_bilinear(prev_thermal_.grad_u, 0, xb.x(), xb.y());
        const double gv = *sample_bilinear(prev_thermal_.grad_v, 0, xb.x(), xb.y());
        const double iz = 1.0 / b.z();
        // d pixel / d b for the pinhole projection.
        Eigen::Matrix<double, 2, 3> dpi;
        dpi << rig_.thermal.fx * iz, 0, -rig_.thermal.fx * b.x() * iz * iz, 0, rig_.thermal.fy * iz,
            -rig_.thermal.fy * b.y() * iz * iz;
        const Eigen::RowVector3d dr_dq = Eigen::RowVector2d(gu, gv) * dpi * to_thermal_.rotation();
        // dq/d(omega, v) = [-[q]x, I]
        j << (-dr_dq * skew(q)), dr_dq;
        hess.noalias() += omega * wt * j.transpose() * j;
        grad.noalias() += omega * wt * j.transpose() * r;
      }
    }
    if (lin) {
      lin->hessian = hess;
      lin->gradient = grad;
      lin->energy = energy;
      lin->associations = count;
    }
    return energy;
  }

 private:
  const RigCalibration& rig_;
  DepthPoints prev_, curr_;
  PoseSE3 to_thermal_;
  Tensor prev_thermal_raw_, curr_thermal_raw_;
  std::vector<double> prev_zbuf_, curr_zbuf_;
  ThermalPlane prev_thermal_;
  Tensor curr_thermal_;
  double max_distance_ = 0.1;
};

}  // namespace

RefineResult refine_pose(const MultiModalFrame& prev, const MultiModalFrame& curr, const RigCalibration& rig,
                         const PoseSE3& init, const RefineOptions& options) {
  PoseProblem problem(prev, curr, rig);
  RefineResult result;
  result.pose = init;
  const std::size_t levels = options.blur_levels.empty() ? 1 : options.blur_levels.size();
  for (std::size_t level = 0; level < levels; ++level) {
    const bool last = level + 1 == levels;
    const double sigma = options.blur_levels.empty() ? 0.0 : options.blur_levels[level];
    problem.set_level(sigma, std::max(0.02, options.max_association_distance * std::pow(0.5, double(level))));
    result.energy_history.clear();

    Linearization lin;
    problem.evaluate(result.pose, options.omega, &lin);
    if (lin.associations < 6) {
      throw std::runtime_error("refine_pose: only " + std::to_string(lin.associations) +
                               " geometric associations (need at least 6)");
    }
    result.associations = lin.associations;
    result.energy_history.push_back(lin.energy);
    double lambda = 1e-4;
    std::size_t stalled = 0;
    result.converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      ++result.iterations;
      Mat6 a = lin.hessian;
      const double scale = std::max(a.diagonal().maxCoeff(), 1e-300);
      for (int d = 0; d < 6; ++d) a(d, d) += lambda * a(d, d) + 1e-12 * scale;
      const Vec6 step = -a.ldlt().solve(lin.gradient);
      if (!step.allFinite()) break;
      if (step.norm() < options.min_update) {
        result.converged = true;
        break;
      }
      const PoseSE3 candidate = PoseSE3::from_twist(step) * result.pose;
      Linearization next;
      problem.evaluate(candidate, options.omega, &next);
      if (next.associations >= 6 && next.energy < lin.energy) {
        result.pose = candidate;
        lin = next;
        result.associations = next.associations;
        result.energy_history.push_back(next.energy);
        lambda = std::max(lambda / 3.0, 1e-9);
        stalled = 0;
      } else {
        lambda *= 4.0;
        if (++stalled >= options.max_stalled_steps) {
          if (last) result.stalled = true;
          break;
        }
      }
    }
  }
  return result;
}

ReprojectionStats reprojection_stats(const AlignedVisible& aligned, const Tensor& correspondence) {
  const std::size_t h = aligned.mask.dim(2), w = aligned.mask.dim(3), n = h * w;
  if (correspondence.shape() != Shape{1, 3, h, w}) {
    throw ShapeError("correspondence " + shape_str(correspondence.shape()) + " does not match the thermal grid");
  }
  ReprojectionStats s;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (aligned.mask[i] <= 0.0) continue;
    if (correspondence[2 * n + i] <= 0.0) {
      ++s.false_fill;
      continue;
    }
    total += std::hypot(aligned.source_coords[i] - correspondence[i],
                        aligned.source_coords[n + i] - correspondence[n + i]);
    ++s.compared;
  }
  s.mean_error = s.compared ? total / double(s.compared) : 0.0;
  return s;
}

PoseSE3 rotation_from_displacement(Displacement2D u, const RigCalibration& rig) {
  const Eigen::Vector3d omega(double(u.dv) / rig.thermal.fy, -double(u.du) / rig.thermal.fx, 0.0);
  const PoseSE3 in_thermal(so3_exp(omega), Eigen::Vector3d::Zero());
  const PoseSE3& offset = rig.visible_to_thermal_offset;
  return offset * in_thermal * offset.inverse();
}

TrajectoryEstimate estimate_trajectory(const std::vector<MultiModalFrame>& frames, const RigCalibration& rig,
                                       const PoseSE3& first_pose, const TrajectoryOptions& options) {
  TrajectoryEstimate est;
  if (frames.empty()) return est;
  est.visible.push_back(first_pose);
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const Displacement2D u = estimate_displacement(frames[k - 1].thermal, frames[k].thermal, options.search_radius);
    RefineResult step = refine_pose(frames[k - 1], frames[k], rig, rotation_from_displacement(u, rig), options.refine);
    est.visible.push_back(est.visible.back() * step.pose);
    est.steps.push_back(std::move(step));
  }
  for (const PoseSE3& p : est.visible) est.thermal.push_back(p * rig.visible_to_thermal_offset);
  return est;
}

}  // namespace mfsr
