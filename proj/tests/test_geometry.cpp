// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mfsr/geometry.hpp"
#include "mfsr/scene.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace mfsr;
using namespace mfsr::testing;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

double naive_energy(const Tensor& prev, const Tensor& curr, Displacement2D u) {
  const long h = long(prev.dim(2)), w = long(prev.dim(3));
  double sum = 0.0;
  long n = 0;
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      const long ci = i + u.dv, cj = j + u.du;
      if (ci < 0 || ci >= h || cj < 0 || cj >= w) continue;
      const double d = curr.at(0, 0, ci, cj) - prev.at(0, 0, i, j);
      sum += d * d;
      ++n;
    }
  return sum / double(n);
}

CameraIntrinsics camera() { return {150.0, 152.0, 79.5, 59.5, 160, 120}; }

}  // namespace

TEST_CASE("SE3 algebra") {
  std::mt19937_64 rng(1);
  const PoseSE3 a = random_perturbation(rng), b = random_perturbation(rng), c = random_perturbation(rng);
  CHECK(max_abs((a * a.inverse()).matrix() - Eigen::Matrix4d::Identity()) < 1e-14);
  CHECK(max_abs(((a * b) * c).matrix() - (a * (b * c)).matrix()) < 1e-14);
  CHECK(max_abs((a * b).matrix() - a.matrix() * b.matrix()) < 1e-14);
  CHECK(max_abs(PoseSE3::from_row_major(a.row_major()).matrix() - a.matrix()) < 1e-15);
  const Eigen::Vector3d p(0.3, -1.0, 2.0);
  CHECK((a * (a.inverse() * p) - p).norm() < 1e-14);
  CHECK(max_abs(so3_exp(Eigen::Vector3d::Zero()) - Eigen::Matrix3d::Identity()) == 0.0);
  CHECK(max_abs(PoseSE3::from_twist(Eigen::Matrix<double, 6, 1>::Zero()).matrix() - Eigen::Matrix4d::Identity()) == 0.0);

  const Eigen::Vector3d omega(0.02, -0.01, 0.03);
  CHECK(PoseSE3::angle_between(PoseSE3::from_axis_angle(omega, Eigen::Vector3d::Zero()), PoseSE3::identity()) ==
        doctest::Approx(omega.norm()).epsilon(1e-12));
  CHECK(max_abs(so3_exp(omega) - Eigen::AngleAxisd(omega.norm(), omega.normalized()).toRotationMatrix()) < 1e-15);

  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(0, 0) = -1.0;
  CHECK_THROWS_AS(PoseSE3(bad, Eigen::Vector3d::Zero()), std::invalid_argument);
  CHECK_THROWS_AS(PoseSE3(2.0 * Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST_CASE("camera model") {
  const CameraIntrinsics k = camera();
  SUBCASE("backproject and project are inverse") {
    for (double u : {0.0, 33.3, 159.0})
      for (double v : {0.0, 60.5, 119.0}) {
        const auto p = backproject(u, v, 2.5, k);
        REQUIRE(p);
        CHECK(p->z() == 2.5);
        const Eigen::Vector2d q = k.project(*p);
        CHECK(q.x() == doctest::Approx(u).epsilon(1e-12));
        CHECK(q.y() == doctest::Approx(v).epsilon(1e-12));
      }
    CHECK_FALSE(backproject(1.0, 1.0, 0.0, k));
    CHECK_FALSE(backproject(1.0, 1.0, std::nan(""), k));
  }
  SUBCASE("project_to_thermal with a shared pose is a plain projection") {
    const auto p = backproject(40.0, 70.0, 1.7, k);
    const auto q = project_to_thermal(*p, PoseSE3::identity(), PoseSE3::identity(), k);
    REQUIRE(q);
    CHECK((*q - Eigen::Vector2d(40.0, 70.0)).norm() < 1e-12);
  }
  SUBCASE("points behind the thermal camera are rejected") {
    const PoseSE3 turned = PoseSE3::from_axis_angle({0.0, std::numbers::pi, 0.0}, Eigen::Vector3d::Zero());
    CHECK_FALSE(project_to_thermal({0.0, 0.0, 2.0}, turned, PoseSE3::identity(), k));
  }
  SUBCASE("scaled keeps the field of view") {
    const CameraIntrinsics half = k.scaled(80, 60);
    const Eigen::Vector3d p(0.4, -0.2, 3.0);
    const Eigen::Vector2d a = k.project(p), b = half.project(p);
    CHECK((a.x() + 0.5) / 2.0 - 0.5 == doctest::Approx(b.x()).epsilon(1e-12));
    CHECK((a.y() + 0.5) / 2.0 - 0.5 == doctest::Approx(b.y()).epsilon(1e-12));
  }
}

TEST_CASE("thermal consistency energy matches the overlap loop") {
  const Tensor prev = random_texture(40, 50, 1), curr = random_texture(40, 50, 2);
  for (Displacement2D u : {Displacement2D{0, 0}, {3, -2}, {-7, 5}, {10, 10}, {-10, -1}})
    CHECK(thermal_consistency_energy(prev, curr, u) == doctest::Approx(naive_energy(prev, curr, u)).epsilon(1e-12));
  CHECK_THROWS_AS(thermal_consistency_energy(prev, curr, {50, 0}), std::invalid_argument);
}

TEST_CASE("displacement search") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> shift(-10, 10);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int trial = 0; trial < 20; ++trial) {
    const Displacement2D truth{shift(rng), shift(rng)};
    const Tensor prev = random_texture(64, 80, 100 + trial);
    const Tensor curr = shifted(prev, truth, 200 + trial);
    CHECK(estimate_displacement(prev, curr, 10) == truth);
    CHECK(thermal_consistency_energy(prev, curr, truth) == 0.0);

    Tensor noisy_prev = prev, noisy_curr = curr;
    for (auto& v : noisy_prev.storage()) v += noise(rng);
    for (auto& v : noisy_curr.storage()) v += noise(rng);
    CHECK(estimate_displacement(noisy_prev, noisy_curr, 10) == truth);
  }
  SUBCASE("a flat image ties at zero motion") {
    const Tensor flat(Shape{1, 1, 30, 30}, 0.4);
    CHECK(estimate_displacement(flat, flat, 5) == Displacement2D{0, 0});
  }
  SUBCASE("shifts beyond the radius are not found") {
    const Tensor prev = random_texture(64, 64, 7);
    CHECK_FALSE(estimate_displacement(prev, shifted(prev, {9, 0}, 8), 4) == Displacement2D{9, 0});
  }
}

TEST_CASE("rendering onto the thermal plane") {
  SUBCASE("identical cameras copy the image") {
    const SceneSpec scene = two_plane_scene();
    const RigCalibration rig = scene.rig.calibration();
    const RenderedFrame f = render_frame(scene, PoseSE3::identity());
    const AlignedVisible a = render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible, PoseSE3::identity(),
                                                    rig.visible, PoseSE3::identity());
    std::size_t checked = 0;
    for (std::size_t v = 2; v + 2 < rig.visible.height; ++v)
      for (std::size_t u = 2; u + 2 < rig.visible.width; ++u) {
        if (a.mask.at(0, 0, v, u) == 0.0) continue;
        CHECK(a.source_coords.at(0, 0, v, u) == doctest::Approx(double(u)).epsilon(1e-9));
        CHECK(a.source_coords.at(0, 1, v, u) == doctest::Approx(double(v)).epsilon(1e-9));
        ++checked;
      }
    CHECK(checked > rig.visible.width * rig.visible.height / 2);
  }
  SUBCASE("two planes: disoccluded pixels stay empty") {
    const SceneSpec scene = two_plane_scene();
    const RigCalibration rig = scene.rig.calibration();
    const RenderedFrame f = render_frame(scene, PoseSE3::identity());
    const AlignedVisible a = render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible, f.frame.pose_visible,
                                                    rig.thermal, f.frame.pose_thermal);
    const ReprojectionStats s = reprojection_stats(a, f.correspondence);
    CHECK(s.false_fill == 0);
    CHECK(s.mean_error < 0.5);
    const std::size_t pixels = rig.thermal.width * rig.thermal.height;
    std::size_t hidden = 0;
    for (std::size_t t = 0; t < pixels; ++t) hidden += f.correspondence[2 * pixels + t] == 0.0;
    CHECK(hidden > 0);
  }
  SUBCASE("cluttered scenes reproject within half a pixel") {
    for (std::uint64_t seed : {3, 4}) {
      const SceneSpec scene = random_geometry_scene(seed);
      const RigCalibration rig = scene.rig.calibration();
      const RenderedFrame f = render_frame(scene, scene.trajectory[0]);
      const AlignedVisible a = render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible,
                                                      f.frame.pose_visible, rig.thermal, f.frame.pose_thermal);
      const ReprojectionStats s = reprojection_stats(a, f.correspondence);
      CHECK(s.mean_error < 0.5);
      CHECK(a.coverage > 0.5);
      CHECK_FALSE(a.low_coverage);
    }
  }
  SUBCASE("a camera looking away covers nothing") {
    const SceneSpec scene = two_plane_scene();
    const RigCalibration rig = scene.rig.calibration();
    const RenderedFrame f = render_frame(scene, PoseSE3::identity());
    const PoseSE3 away = PoseSE3::from_axis_angle({0.0, std::numbers::pi, 0.0}, Eigen::Vector3d::Zero());
    const AlignedVisible a =
        render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible, PoseSE3::identity(), rig.thermal, away);
    CHECK(a.coverage == 0.0);
    CHECK(a.low_coverage);
  }
}

TEST_CASE("pose refinement") {
  std::mt19937_64 rng(11);
  SUBCASE("recovers a perturbation in a cluttered room") {
    const SceneSpec scene = random_geometry_scene(21);
    const PoseError e = refine_trial(scene, scene.trajectory[0], random_perturbation(rng), 0.1);
    CHECK(e.rotation_deg < 0.1);
    CHECK(e.translation_mm < 2.0);
  }
  SUBCASE("the thermal term resolves in-plane motion in front of a flat wall") {
    const SceneSpec scene = flat_wall_scene(3);
    const PoseSE3 slide = PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), {0.03, -0.01, 0.0});
    const PoseError with = refine_trial(scene, PoseSE3::identity(), slide, 0.1);
    const PoseError without = refine_trial(scene, PoseSE3::identity(), slide, 0.0);
    CHECK(with.translation_mm * 4.0 < without.translation_mm);
  }
  SUBCASE("too few associations") {
    const SceneSpec scene = random_geometry_scene(5);
    MultiModalFrame prev = render_frame(scene, scene.trajectory[0]).frame;
    MultiModalFrame curr = prev;
    for (auto& d : curr.depth.storage()) d = 0.0;
    CHECK_THROWS_AS(refine_pose(prev, curr, scene.rig.calibration(), PoseSE3::identity()), std::runtime_error);
  }
  SUBCASE("a pure rotation guess from the displacement has the right sign") {
    const RigCalibration rig = random_geometry_scene(1).rig.calibration();
    CHECK(max_abs(rotation_from_displacement({0, 0}, rig).matrix() - Eigen::Matrix4d::Identity()) < 1e-15);
    const PoseSE3 r = rotation_from_displacement({4, 0}, rig);
    // Image content moving right means the camera turned left (negative yaw).
    const Eigen::Vector3d forward = r.rotation() * Eigen::Vector3d::UnitZ();
    CHECK(forward.x() < 0.0);
  }
}

TEST_CASE("trajectory chaining follows the rig") {
  SceneSpec scene = random_geometry_scene(8, 3);
  std::vector<MultiModalFrame> frames;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) frames.push_back(render_frame(scene, scene.trajectory[i], i).frame);
  const TrajectoryEstimate est = estimate_trajectory(frames, scene.rig.calibration(), scene.trajectory[0]);
  REQUIRE(est.visible.size() == 3);
  REQUIRE(est.steps.size() == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const PoseError e = pose_error(est.visible[i], scene.trajectory[i]);
    CHECK(e.rotation_deg < 0.2);
    CHECK(e.translation_mm < 4.0);
    CHECK(max_abs(est.thermal[i].matrix() - (est.visible[i] * scene.rig.visible_to_thermal_offset).matrix()) < 1e-12);
  }
}

TEST_CASE("frame pairing") {
  const auto at = [](double x) { return PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), {x, 0.0, 0.0}); };
  const std::vector<PoseSE3> visible{at(0.0), at(0.1), at(0.2), at(0.3)};
  CHECK(select_frame_pair(visible, {at(0.01), at(0.26), at(0.9)}) == std::vector<std::size_t>{0, 3, 3});
  CHECK(select_frame_pair(visible, {at(0.05)}) == std::vector<std::size_t>{0});
  CHECK(pose_distance(at(0.0), PoseSE3::from_axis_angle({0.0, 0.0, 0.5}, Eigen::Vector3d::Zero())) ==
        doctest::Approx(kRotationWeight * 0.5));
  CHECK_THROWS_AS(select_frame_pair({}, {at(0.0)}), std::invalid_argument);
}

TEST_CASE("sampling helpers") {
  Tensor t(Shape{1, 1, 2, 2}, std::vector<double>{0.0, 1.0, 2.0, 3.0});
  CHECK(*sample_bilinear(t, 0, 0.5, 0.5) == doctest::Approx(1.5));
  CHECK(*sample_bilinear(t, 0, 1.0, 0.0) == 1.0);
  CHECK_FALSE(sample_bilinear(t, 0, 1.01, 0.0));
  CHECK_FALSE(sample_bilinear(t, 0, -0.01, 0.0));
  const Tensor flat(Shape{1, 2, 9, 7}, 0.25);
  const Tensor blurred = gaussian_blur(flat, 2.0);
  for (double v : blurred.storage()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}
