// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic alignment scenarios shared by the geometry tests and the
// acceptance binary.

#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "mfsr/scene.hpp"

namespace mfsr::testing {

/// A small plane floating 1.5 m in front of a wall at 3 m, both textured.
/// The 6 cm baseline leaves a disoccluded band beside the near plane.
inline SceneSpec two_plane_scene() {
  SceneSpec scene = random_geometry_scene(1);
  scene.primitives.clear();
  Primitive wall;
  wall.pose = PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), {0.0, 0.0, 3.0});
  wall.size = {10.0, 10.0, 0.0};
  wall.albedo = {TextureKind::kNoise, 0.3, 0.1, 0.9, 11};
  wall.emission = {TextureKind::kNoise, 0.4, 0.0, 1.0, 12};
  Primitive front = wall;
  front.pose = PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), {0.0, 0.0, 1.5});
  front.size = {0.6, 0.6, 0.0};
  front.albedo = {TextureKind::kChecker, 0.1, 0.2, 0.8, 0};
  front.temperature = 0.5;
  scene.primitives = {wall, front};
  scene.trajectory = {PoseSE3::identity()};
  scene.validate();
  return scene;
}

/// Random relative motion within 5 degrees and 5 cm of the identity.
inline PoseSE3 random_perturbation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = 5.0 * std::numbers::pi / 180.0 * std::abs(u(rng));
  Eigen::Vector3d t(u(rng), u(rng), u(rng));
  t = t.normalized() * 0.05 * std::abs(u(rng));
  return PoseSE3::from_axis_angle(axis * angle, t);
}

inline double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

struct PoseError {
  double rotation_deg = 0.0;
  double translation_mm = 0.0;
};

inline PoseError pose_error(const PoseSE3& estimate, const PoseSE3& truth) {
  return {degrees(PoseSE3::angle_between(estimate, truth)),
          (estimate.translation() - truth.translation()).norm() * 1000.0};
}

/// Refines the relative pose of two frames rendered at `base` and
/// `base * delta`, starting from the identity.
inline PoseError refine_trial(const SceneSpec& scene, const PoseSE3& base, const PoseSE3& delta, double omega) {
  const MultiModalFrame prev = render_frame(scene, base, 0).frame;
  const MultiModalFrame curr = render_frame(scene, base * delta, 1).frame;
  RefineOptions options;
  options.omega = omega;
  return pose_error(refine_pose(prev, curr, scene.rig.calibration(), PoseSE3::identity(), options).pose, delta);
}

/// Smooth random single-plane image for the displacement search.
inline Tensor random_texture(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape{1, 1, h, w});
  for (auto& v : t.storage()) v = u(rng);
  return gaussian_blur(t, 1.0);
}

/// curr(x + shift) = prev(x); pixels uncovered by the shift get fresh values.
inline Tensor shifted(const Tensor& prev, Displacement2D shift, std::uint64_t seed) {
  const Tensor fill = random_texture(prev.dim(2), prev.dim(3), seed);
  Tensor curr = fill;
  const long h = long(prev.dim(2)), w = long(prev.dim(3));
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const long si = i - shift.dv, sj = j - shift.du;
      if (si >= 0 && si < h && sj >= 0 && sj < w) curr.at(0, 0, i, j) = prev.at(0, 0, si, sj);
    }
  return curr;
}

}  // namespace mfsr::testing
