// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Camera model, rigid transforms and the visible/thermal alignment pipeline:
// coarse 2-D displacement search on consecutive thermal frames, combined
// point-to-plane ICP + thermal photo-consistency pose refinement, projection
// onto the thermal image plane and z-buffered virtual-view rendering.
//
// Conventions: pixel (u, v) addresses column u, row v, and integer
// coordinates are pixel centers. Poses map camera coordinates to world
// coordinates (x_world = R x_cam + t); cameras look down +z.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <string>
#include <vector>

#include "mfsr/tensor.hpp"

namespace mfsr {

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;

  void validate() const;
  Eigen::Vector2d project(const Eigen::Vector3d& p) const;  // requires p.z() > 0
  Eigen::Vector3d ray(double u, double v) const;            // K^-1 (u, v, 1)
  bool contains(double u, double v) const;                   // inside [-0.5, extent - 0.5)
  /// Same field of view at a different resolution.
  CameraIntrinsics scaled(std::size_t new_width, std::size_t new_height) const;
};

class PoseSE3 {
 public:
  PoseSE3() = default;
  /// Throws std::invalid_argument unless `rotation` is orthonormal with det +1.
  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static PoseSE3 identity() { return {}; }
  /// exp of the twist (omega, v): rotation exp(omega), translation v applied
  /// after it (left-multiplied update convention used by refine_pose).
  static PoseSE3 from_twist(const Eigen::Matrix<double, 6, 1>& twist);
  static PoseSE3 from_axis_angle(const Eigen::Vector3d& axis_angle, const Eigen::Vector3d& translation);
  /// Row-major 3x4 [R | t].
  static PoseSE3 from_row_major(const std::vector<double>& values);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  PoseSE3 operator*(const PoseSE3& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
  PoseSE3 inverse() const;
  Eigen::Matrix4d matrix() const;
  std::vector<double> row_major() const;

  /// Geodesic rotation angle (radians) between the two rotations.
  static double angle_between(const PoseSE3& a, const PoseSE3& b);

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega);

struct MultiModalFrame {
  Tensor visible;  // [1,3,H,W] in [0,1]
  Tensor thermal;  // [1,1,Ht,Wt] in [0,1]
  Tensor depth;    // [1,1,H,W] meters along the optical axis, registered to the visible camera; 0 = invalid
  PoseSE3 pose_visible;
  PoseSE3 pose_thermal;
  std::size_t index = 0;
};

/// Intrinsics and extrinsics of the capture rig. The depth stream is
/// registered to the visible camera.
struct RigCalibration {
  CameraIntrinsics visible;
  CameraIntrinsics thermal;
  /// Pose of the thermal camera in visible-camera coordinates.
  PoseSE3 visible_to_thermal_offset;
};

// ---- thermal displacement --------------------------------------------------

struct Displacement2D {
  int du = 0;  // columns
  int dv = 0;  // rows
  bool operator==(const Displacement2D&) const = default;
};

/// Mean over the overlap of (I_curr(x + u) - I_prev(x))^2. Images are single
/// planes ([1,1,H,W] or [H,W]). Throws std::invalid_argument on an empty overlap.
double thermal_consistency_energy(const Tensor& prev, const Tensor& curr, Displacement2D u);

/// Exhaustive search over |du|, |dv| <= radius. Ties go to the smallest
/// |u|^2, then lexicographically smallest (du, dv).
Displacement2D estimate_displacement(const Tensor& prev, const Tensor& curr, int radius);

// ---- pose refinement -------------------------------------------------------

struct RefineOptions {
  double omega = 0.1;            // weight of the thermal term
  std::size_t max_iterations = 30;  // per pyramid level
  double min_update = 1e-7;      // twist-norm convergence threshold
  /// Gaussian blur sigmas (thermal pixels) of the coarse-to-fine schedule. The
  /// finest level keeps a light blur: bilinear sampling of hard texture edges
  /// otherwise biases the optimum.
  std::vector<double> blur_levels{4.0, 2.0, 1.0};
  double max_association_distance = 0.15;  // meters, at the coarsest level
  std::size_t max_stalled_steps = 3;
};

struct RefineResult {
  /// Maps current depth-camera coordinates to previous depth-camera coordinates.
  PoseSE3 pose;
  std::size_t iterations = 0;
  bool converged = false;
  /// Set when the energy failed to decrease for max_stalled_steps consecutive
  /// damped steps; `pose` is then the best pose seen.
  bool stalled = false;
  std::vector<double> energy_history;  // energy after every accepted step of the finest level
  std::size_t associations = 0;
};

/// Minimizes E = E_icp + omega * E_td over the relative depth-camera pose with
/// damped Gauss-Newton on a 6-vector twist. Throws std::runtime_error when
/// fewer than 6 associations survive.
RefineResult refine_pose(const MultiModalFrame& prev, const MultiModalFrame& curr, const RigCalibration& rig,
                         const PoseSE3& init, const RefineOptions& options = {});

/// Pure rotation of the depth camera (current -> previous) that explains a
/// thermal image displacement `u` under the small-angle approximation.
PoseSE3 rotation_from_displacement(Displacement2D u, const RigCalibration& rig);

struct TrajectoryOptions {
  int search_radius = 10;
  RefineOptions refine;
};

struct TrajectoryEstimate {
  std::vector<PoseSE3> visible;  // depth/visible camera poses
  std::vector<PoseSE3> thermal;
  std::vector<RefineResult> steps;  // steps[k] aligns frame k+1 to frame k
};

/// Chains displacement search and refine_pose over consecutive frames,
/// starting from `first_pose` for frame 0.
TrajectoryEstimate estimate_trajectory(const std::vector<MultiModalFrame>& frames, const RigCalibration& rig,
                                       const PoseSE3& first_pose, const TrajectoryOptions& options = {});

// ---- projection and rendering ----------------------------------------------

/// P = depth * K^-1 (u, v, 1), or nothing for depth <= 0 / non-finite.
std::optional<Eigen::Vector3d> backproject(double u, double v, double depth, const CameraIntrinsics& k);

/// x_T = k_T(T_T^-1 T_V P); nothing when the point is not in front of the
/// thermal camera.
std::optional<Eigen::Vector2d> project_to_thermal(const Eigen::Vector3d& p_visible, const PoseSE3& pose_thermal,
                                                  const PoseSE3& pose_visible, const CameraIntrinsics& k_thermal);

struct AlignedVisible {
  Tensor image;          // [1,C,Ht,Wt]
  Tensor mask;           // [1,1,Ht,Wt], 1 = filled
  Tensor source_coords;  // [1,2,Ht,Wt] visible (u, v) that landed on each thermal pixel
  double coverage = 0.0;
  bool low_coverage = false;  // coverage < 20%
};

/// Forward-warps the visible image onto the thermal image plane. Every 2x2
/// block of valid visible pixels forms two triangles that are projected and
/// rasterized with a z-buffer (nearer wins; equal depth keeps the lower source
/// index); attributes are interpolated barycentrically. Triangles whose depth
/// spread exceeds `discontinuity` (relative) straddle an occlusion boundary
/// and are dropped, so disoccluded thermal pixels stay unfilled.
AlignedVisible render_aligned_visible(const Tensor& visible, const Tensor& depth, const CameraIntrinsics& k_visible,
                                      const PoseSE3& pose_visible, const CameraIntrinsics& k_thermal,
                                      const PoseSE3& pose_thermal, double discontinuity = 0.05);

struct ReprojectionStats {
  double mean_error = 0.0;     // pixels, over filled and co-visible thermal pixels
  std::size_t compared = 0;
  std::size_t false_fill = 0;  // filled although the visible camera cannot see the point
};

/// Compares the source coordinates of a rendering against a reference
/// correspondence tensor [1,3,Ht,Wt] holding (u, v, co-visible flag).
ReprojectionStats reprojection_stats(const AlignedVisible& aligned, const Tensor& correspondence);

inline constexpr double kRotationWeight = 0.1;  // meters per radian

/// Translation distance + kRotationWeight * geodesic angle.
double pose_distance(const PoseSE3& a, const PoseSE3& b);

/// For each thermal pose, the index of the closest visible pose (lowest index
/// on ties). Throws std::invalid_argument on an empty trajectory.
std::vector<std::size_t> select_frame_pair(const std::vector<PoseSE3>& trajectory_visible,
                                           const std::vector<PoseSE3>& trajectory_thermal);

// ---- helpers shared with the synthesizer and tests ---------------------------

/// Bilinear sample of plane `plane` of an [N,C,H,W] tensor at continuous
/// (u, v); nothing outside [0, W-1] x [0, H-1].
std::optional<double> sample_bilinear(const Tensor& image, std::size_t plane, double u, double v);

/// Separable Gaussian blur of every plane with clamped borders.
Tensor gaussian_blur(const Tensor& image, double sigma);

}  // namespace mfsr
