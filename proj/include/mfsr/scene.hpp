// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural visible/thermal/depth scenes built from textured rectangles and
// boxes, rendered by ray casting. Thermal appearance is emission driven (no
// shading) and blends a texture shared with the visible albedo against an
// independent field with weight rho.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfsr/config.hpp"
#include "mfsr/dataset.hpp"
#include "mfsr/geometry.hpp"

namespace mfsr {

enum class TextureKind { kConstant, kChecker, kNoise, kGradient };

TextureKind parse_texture_kind(const std::string& s);
std::string to_string(TextureKind k);

struct TextureSpec {
  TextureKind kind = TextureKind::kConstant;
  double cell = 0.25;  // meters per checker cell / noise lattice step / half ramp
  double lo = 0.0;
  double hi = 1.0;
  std::uint64_t seed = 0;

  /// Value at surface coordinates (s, t) in meters, within [lo, hi].
  double evaluate(double s, double t) const;
};

enum class PrimitiveKind { kPlane, kBox };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kPlane;
  PoseSE3 pose;  // object to world; a plane spans local x/y and faces local -z
  Eigen::Vector3d size{1.0, 1.0, 1.0};  // full extents; z unused for planes
  TextureSpec albedo;
  Eigen::Vector3d tint{1.0, 1.0, 1.0};
  TextureSpec emission;
  double rho = 0.8;            // weight of the albedo field in the thermal signal
  double temperature = 0.3;    // emission offset
  double thermal_contrast = 0.5;

  double thermal_value(double albedo_value, double s, double t) const;
  /// Textured in the visible channel over constant emission.
  bool visible_only() const {
    return rho == 0.0 && emission.kind == TextureKind::kConstant && albedo.kind != TextureKind::kConstant;
  }
};

struct RigSpec {
  CameraIntrinsics visible;
  CameraIntrinsics thermal;
  PoseSE3 visible_to_thermal_offset;

  RigCalibration calibration() const { return {visible, thermal, visible_to_thermal_offset}; }
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  RigSpec rig;
  std::vector<PoseSE3> trajectory;  // rig (= visible camera) poses
  Eigen::Vector3d light_direction{0.3, -0.5, 1.0};  // direction the light travels
  double ambient = 0.35;
  double thermal_noise = 0.0;  // additive Gaussian sigma on thermal frames
  std::uint64_t seed = 0;

  void validate() const;
  /// Parses the structured-text scene description (see configs/*.scene).
  static SceneSpec from_config(const ConfigFile& cfg);
};

struct RayHit {
  double distance = 0.0;  // ray parameter: hit = origin + distance * direction
  std::size_t primitive = 0;
  double s = 0.0, t = 0.0;  // surface coordinates on the hit face
  Eigen::Vector3d normal;   // world frame, facing the ray origin
};

/// Nearest hit of the ray origin + d * direction (direction need not be unit).
std::optional<RayHit> ray_cast(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

/// Depth (camera z) of the surface seen through continuous pixel (u, v).
std::optional<double> cast_depth(const SceneSpec& scene, const PoseSE3& camera_pose, const CameraIntrinsics& k,
                                 double u, double v);

struct RenderedFrame {
  MultiModalFrame frame;
  /// [1,3,Ht,Wt]: visible (u, v) of each thermal pixel's surface point and a
  /// co-visibility flag (1 when the visible camera sees that same point).
  Tensor correspondence;
  std::vector<int> thermal_primitive;  // primitive hit per thermal pixel, -1 for none
};

/// Throws std::invalid_argument if the camera sits inside a box.
RenderedFrame render_frame(const SceneSpec& scene, const PoseSE3& rig_pose, std::size_t index = 0);

/// Room-like scene with occluding boxes in front of textured walls, a
/// visible/depth camera at 160x120 and a thermal camera at 128x96 mounted
/// 6 cm to its right. Trajectory of `frames` small steps.
SceneSpec random_geometry_scene(std::uint64_t seed, std::size_t frames = 2);

/// Single fronto-parallel wall at `distance` with thermal-only texture:
/// degenerate for point-to-plane ICP in the wall plane.
SceneSpec flat_wall_scene(std::uint64_t seed, double distance = 2.5);

// ---- sequence directories ------------------------------------------------------

/// Writes visible_NNNN.ppm, thermal_NNNN.pgm (16-bit), depth_NNNN.pgm (16-bit
/// millimeters), correspondence_NNNN.mft, poses_visible.txt, poses_thermal.txt
/// (frame index then 12 row-major values per line) and rig.cfg.
void write_sequence(const SceneSpec& scene, const std::filesystem::path& dir);

struct Sequence {
  std::vector<MultiModalFrame> frames;
  std::vector<Tensor> correspondences;  // empty entries when not stored
  RigCalibration rig;
};

Sequence read_sequence(const std::filesystem::path& dir);

void write_poses(const std::filesystem::path& path, const std::vector<PoseSE3>& poses);
std::vector<PoseSE3> read_poses(const std::filesystem::path& path);

ConfigFile rig_to_config(const RigCalibration& rig);
RigCalibration rig_from_config(const ConfigFile& cfg);

// ---- SR dataset -------------------------------------------------------------------

struct DatasetFamily {
  std::size_t count = 200;
  double test_fraction = 0.2;
  std::size_t image_size = 160;  // HR side length, multiple of 8
  double rho = 0.8;
  /// Probability that a foreground primitive carries visible-only texture over
  /// constant emission.
  double salient_fraction = 0.3;
  double thermal_noise = 0.01;
  std::uint64_t seed = 1;

  static DatasetFamily from_config(const ConfigFile& cfg);
};

/// Random single-camera scene; visible and thermal share the camera, so the
/// rendered pair is pixel-aligned.
SceneSpec random_sr_scene(const DatasetFamily& family, std::uint64_t seed);

struct SrSample {
  Tensor visible;       // [1,3,H,W]
  Tensor thermal;       // [1,1,H,W]
  /// [1,1,H,W]: primitive index / 255 where a visible-only primitive is seen,
  /// 0 elsewhere (8-bit PGM labels; index 0 is the background wall).
  Tensor salient_mask;
};

SrSample render_sr_sample(const DatasetFamily& family, std::uint64_t seed);

/// Renders `family.count` pairs into out_dir and writes manifest.json. The last
/// round(count * test_fraction) samples form the test split.
DatasetManifest make_sr_dataset(const DatasetFamily& family, const std::filesystem::path& out_dir);

}  // namespace mfsr
