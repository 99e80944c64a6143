// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mfsr/imgproc.hpp"
#include "mfsr/serialize.hpp"

namespace mfsr {
namespace {

constexpr double kHitEpsilon = 1e-9;
constexpr double kDepthUnitsPerMeter = 1000.0;  // depth PGMs store millimeters
constexpr double kDegree = std::numbers::pi / 180.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = splitmix(seed ^ splitmix(std::uint64_t(ix) * 0x632be59bd9b4e019ULL ^
                                                   std::uint64_t(iy) * 0x85157af5ULL));
  return double(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = std::int64_t(fx), iy = std::int64_t(fy);
  const double tx = x - fx, ty = y - fy;
  const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

std::vector<double> parse_list(const std::string& text, std::size_t expected, const std::string& key) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid number in " + key + ": '" + item + "'");
    }
  }
  if (expected && values.size() != expected) {
    throw ConfigError(key + " expects " + std::to_string(expected) + " values, got " + std::to_string(values.size()));
  }
  return values;
}

Eigen::Vector3d get_vec3(const ConfigFile& cfg, const std::string& key, const Eigen::Vector3d& fallback) {
  if (!cfg.has(key)) return fallback;
  const auto v = parse_list(cfg.get(key), 3, key);
  return {v[0], v[1], v[2]};
}

// translation x,y,z then axis-angle in degrees.
PoseSE3 get_pose6(const ConfigFile& cfg, const std::string& key) {
  if (!cfg.has(key)) return PoseSE3::identity();
  const auto v = parse_list(cfg.get(key), 6, key);
  return PoseSE3::from_axis_angle(Eigen::Vector3d(v[3], v[4], v[5]) * kDegree, Eigen::Vector3d(v[0], v[1], v[2]));
}

CameraIntrinsics intrinsics_from(const ConfigFile& t, const std::string& what) {
  CameraIntrinsics k;
  k.width = std::size_t(t.get_int("width", 0));
  k.height = std::size_t(t.get_int("height", 0));
  k.fx = t.get_double("fx", 0.0);
  k.fy = t.get_double("fy", k.fx);
  k.cx = t.get_double("cx", (double(k.width) - 1) / 2);
  k.cy = t.get_double("cy", (double(k.height) - 1) / 2);
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
  return k;
}

TextureSpec texture_from(const ConfigFile& t, const std::string& prefix, TextureSpec fallback) {
  TextureSpec tex = fallback;
  if (t.has(prefix)) tex.kind = parse_texture_kind(t.get(prefix));
  tex.cell = t.get_double(prefix + "_cell", tex.cell);
  if (t.has(prefix + "_range")) {
    const auto r = parse_list(t.get(prefix + "_range"), 2, prefix + "_range");
    tex.lo = r[0];
    tex.hi = r[1];
  }
  tex.seed = std::uint64_t(t.get_int(prefix + "_seed", (long long)tex.seed));
  if (!(tex.cell > 0)) throw ConfigError(prefix + "_cell must be positive");
  return tex;
}

std::string index_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, i, ext);
  return buf;
}

// Ray against one primitive; returns the hit in world terms.
std::optional<RayHit> intersect(const Primitive& p, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const Eigen::Matrix3d& r = p.pose.rotation();
  const Eigen::Vector3d o = r.transpose() * (origin - p.pose.translation());
  const Eigen::Vector3d d = r.transpose() * dir;
  const Eigen::Vector3d half = p.size / 2;
  RayHit hit;
  Eigen::Vector3d local_normal;
  if (p.kind == PrimitiveKind::kPlane) {
    if (std::abs(d.z()) < 1e-15) return std::nullopt;
    const double tau = -o.z() / d.z();
    if (!(tau > kHitEpsilon)) return std::nullopt;
    const Eigen::Vector3d q = o + tau * d;
    if (std::abs(q.x()) > half.x() || std::abs(q.y()) > half.y()) return std::nullopt;
    hit.distance = tau;
    hit.s = q.x() + half.x();
    hit.t = q.y() + half.y();
    local_normal = Eigen::Vector3d::UnitZ();
  } else {
    double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-15) {
        if (std::abs(o[a]) > half[a]) return std::nullopt;
        continue;
      }
      double t0 = (-half[a] - o[a]) / d[a], t1 = (half[a] - o[a]) / d[a];
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_near) {
        t_near = t0;
        axis = a;
      }
      t_far = std::min(t_far, t1);
    }
    if (axis < 0 || t_near > t_far || !(t_near > kHitEpsilon)) return std::nullopt;
    const Eigen::Vector3d q = o + t_near * d;
    const int b = (axis + 1) % 3, c = (axis + 2) % 3;
    hit.distance = t_near;
    // Offset each face in texture space so faces do not repeat each other.
    hit.s = q[b] + half[b] + 10.0 * axis;
    hit.t = q[c] + half[c] + (q[axis] > 0 ? 5.0 : 0.0);
    local_normal = Eigen::Vector3d::Unit(axis);
  }
  Eigen::Vector3d n = r * local_normal;
  if (n.dot(dir) > 0) n = -n;
  hit.normal = n;
  return hit;
}

bool inside_box(const Primitive& p, const Eigen::Vector3d& point) {
  if (p.kind != PrimitiveKind::kBox) return false;
  const Eigen::Vector3d q = p.pose.rotation().transpose() * (point - p.pose.translation());
  return (q.array().abs() < (p.size / 2).array()).all();
}

}  // namespace

TextureKind parse_texture_kind(const std::string& s) {
  if (s == "constant") return TextureKind::kConstant;
  if (s == "checker") return TextureKind::kChecker;
  if (s == "noise") return TextureKind::kNoise;
  if (s == "gradient") return TextureKind::kGradient;
  throw ConfigError("unknown texture kind: " + s);
}

std::string to_string(TextureKind k) {
  switch (k) {
    case TextureKind::kConstant:
      return "constant";
    case TextureKind::kChecker:
      return "checker";
    case TextureKind::kNoise:
      return "noise";
    case TextureKind::kGradient:
      return "gradient";
  }
  return "constant";
}

double TextureSpec::evaluate(double s, double t) const {
  double n = 0.0;
  switch (kind) {
    case TextureKind::kConstant:
      return lo;
    case TextureKind::kChecker:
      n = double((std::int64_t(std::floor(s / cell)) + std::int64_t(std::floor(t / cell))) & 1);
      break;
    case TextureKind::kNoise:
      n = (value_noise(s / cell, t / cell, seed) + 0.5 * value_noise(2 * s / cell, 2 * t / cell, seed + 1)) / 1.5;
      break;
    case TextureKind::kGradient:
      n = std::clamp(0.5 * s / cell, 0.0, 1.0);
      break;
  }
  return lo + (hi - lo) * n;
}

double Primitive::thermal_value(double albedo_value, double s, double t) const {
  return temperature + thermal_contrast * (rho * albedo_value + (1.0 - rho) * emission.evaluate(s, t));
}

void SceneSpec::validate() const {
  rig.visible.validate();
  rig.thermal.validate();
  if (trajectory.empty()) throw std::invalid_argument("scene trajectory is empty");
  for (const auto& p : primitives) {
    const bool flat_ok = p.size.x() > 0 && p.size.y() > 0;
    if (!flat_ok || (p.kind == PrimitiveKind::kBox && !(p.size.z() > 0))) {
      throw std::invalid_argument("scene primitive has a non-positive extent");
    }
    if (p.rho < 0 || p.rho > 1) throw std::invalid_argument("scene primitive rho must lie in [0,1]");
  }
}

SceneSpec SceneSpec::from_config(const ConfigFile& cfg) {
  SceneSpec scene;
  const ConfigFile s = cfg.table("scene");
  scene.seed = std::uint64_t(s.get_int("seed", 0));
  scene.thermal_noise = s.get_double("thermal_noise", 0.0);
  scene.ambient = s.get_double("ambient", scene.ambient);
  scene.light_direction = get_vec3(s, "light", scene.light_direction);
  scene.rig.visible = intrinsics_from(cfg.table("camera.visible"), "camera.visible");
  scene.rig.thermal = intrinsics_from(cfg.table("camera.thermal"), "camera.thermal");
  scene.rig.visible_to_thermal_offset = get_pose6(cfg.table("rig"), "thermal_offset");

  const ConfigFile traj = cfg.table("trajectory");
  const auto frames = traj.get_int("frames", 1);
  if (frames <= 0) throw ConfigError("trajectory.frames must be positive");
  const auto start = traj.has("start") ? parse_list(traj.get("start"), 6, "trajectory.start") : std::vector<double>(6);
  const auto step = traj.has("step") ? parse_list(traj.get("step"), 6, "trajectory.step") : std::vector<double>(6);
  const double jitter_t = traj.get_double("jitter_translation", 0.0);
  const double jitter_r = traj.get_double("jitter_rotation", 0.0) * kDegree;
  std::mt19937_64 rng(splitmix(scene.seed ^ 0x7472616aULL));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (long long i = 0; i < frames; ++i) {
    Eigen::Vector3d t, r;
    for (int a = 0; a < 3; ++a) {
      t[a] = start[std::size_t(a)] + double(i) * step[std::size_t(a)];
      r[a] = (start[std::size_t(a + 3)] + double(i) * step[std::size_t(a + 3)]) * kDegree;
    }
    if (i > 0) {
      for (int a = 0; a < 3; ++a) t[a] += jitter_t * unit(rng);
      for (int a = 0; a < 3; ++a) r[a] += jitter_r * unit(rng);
    }
    scene.trajectory.push_back(PoseSE3::from_axis_angle(r, t));
  }

  std::vector<std::string> names;
  for (const auto& [key, value] : cfg.entries()) {
    if (key.rfind("primitive.", 0) != 0) continue;
    const auto dot = key.find('.', 10);
    if (dot == std::string::npos) continue;
    const std::string name = key.substr(10, dot - 10);
    if (names.empty() || names.back() != name) names.push_back(name);
  }
  for (const auto& name : names) {
    const ConfigFile p = cfg.table("primitive." + name);
    Primitive prim;
    const std::string kind = p.get_or("kind", "plane");
    if (kind == "plane") {
      prim.kind = PrimitiveKind::kPlane;
    } else if (kind == "box") {
      prim.kind = PrimitiveKind::kBox;
    } else {
      throw ConfigError("primitive." + name + ": unknown kind " + kind);
    }
    const Eigen::Vector3d center = get_vec3(p, "center", Eigen::Vector3d::Zero());
    const Eigen::Vector3d rot = get_vec3(p, "rotation", Eigen::Vector3d::Zero()) * kDegree;
    prim.pose = PoseSE3::from_axis_angle(rot, center);
    if (p.has("size")) {
      const auto v = parse_list(p.get("size"), 0, "primitive." + name + ".size");
      if (v.size() < 2 || v.size() > 3) throw ConfigError("primitive." + name + ".size expects 2 or 3 values");
      prim.size = {v[0], v[1], v.size() == 3 ? v[2] : 0.0};
    }
    prim.albedo = texture_from(p, "albedo", TextureSpec{TextureKind::kConstant, 0.25, 0.7, 0.7, 0});
    prim.tint = get_vec3(p, "tint", prim.tint);
    prim.emission = texture_from(p, "emission", TextureSpec{TextureKind::kConstant, 0.25, 0.5, 0.5, 0});
    prim.rho = p.get_double("rho", prim.rho);
    prim.temperature = p.get_double("temperature", prim.temperature);
    prim.thermal_contrast = p.get_double("thermal_contrast", prim.thermal_contrast);
    scene.primitives.push_back(prim);
  }
  try {
    scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return scene;
}

std::optional<RayHit> ray_cast(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    auto hit = intersect(scene.primitives[i], origin, direction);
    if (hit && (!best || hit->distance < best->distance)) {
      hit->primitive = i;
      best = hit;
    }
  }
  return best;
}

std::optional<double> cast_depth(const SceneSpec& scene, const PoseSE3& camera_pose, const CameraIntrinsics& k,
                                 double u, double v) {
  // With the camera-frame ray (x, y, 1) the ray parameter equals camera z.
  const auto hit = ray_cast(scene, camera_pose.translation(), camera_pose.rotation() * k.ray(u, v));
  if (!hit) return std::nullopt;
  return hit->distance;
}

RenderedFrame render_frame(const SceneSpec& scene, const PoseSE3& rig_pose, std::size_t index) {
  const PoseSE3 pose_v = rig_pose;
  const PoseSE3 pose_t = rig_pose * scene.rig.visible_to_thermal_offset;
  for (const auto& p : scene.primitives) {
    if (inside_box(p, pose_v.translation()) || inside_box(p, pose_t.translation())) {
      throw std::invalid_argument("render_frame: camera is inside a box primitive");
    }
  }
  const CameraIntrinsics& kv = scene.rig.visible;
  const CameraIntrinsics& kt = scene.rig.thermal;
  const Eigen::Vector3d light = scene.light_direction.normalized();

  RenderedFrame out;
  MultiModalFrame& f = out.frame;
  f.index = index;
  f.pose_visible = pose_v;
  f.pose_thermal = pose_t;
  f.visible = Tensor(Shape{1, 3, kv.height, kv.width});
  f.depth = Tensor(Shape{1, 1, kv.height, kv.width});
  const std::size_t vplane = kv.height * kv.width;
  for (std::size_t v = 0; v < kv.height; ++v)
    for (std::size_t u = 0; u < kv.width; ++u) {
      const auto hit = ray_cast(scene, pose_v.translation(), pose_v.rotation() * kv.ray(double(u), double(v)));
      if (!hit) continue;
      const Primitive& p = scene.primitives[hit->primitive];
      const double albedo = p.albedo.evaluate(hit->s, hit->t);
      const double shade = scene.ambient + (1.0 - scene.ambient) * std::max(0.0, -hit->normal.dot(light));
      const std::size_t i = v * kv.width + u;
      for (int c = 0; c < 3; ++c) f.visible[std::size_t(c) * vplane + i] = std::clamp(p.tint[c] * albedo * shade, 0.0, 1.0);
      f.depth[i] = hit->distance;
    }

  f.thermal = Tensor(Shape{1, 1, kt.height, kt.width});
  out.correspondence = Tensor(Shape{1, 3, kt.height, kt.width});
  out.thermal_primitive.assign(kt.height * kt.width, -1);
  const std::size_t tplane = kt.height * kt.width;
  std::mt19937_64 rng(splitmix(scene.seed * 0x100000001b3ULL + index));
  std::normal_distribution<double> noise(0.0, 1.0);
  const PoseSE3 world_to_v = pose_v.inverse();
  for (std::size_t v = 0; v < kt.height; ++v)
    for (std::size_t u = 0; u < kt.width; ++u) {
      const std::size_t i = v * kt.width + u;
      const Eigen::Vector3d dir = pose_t.rotation() * kt.ray(double(u), double(v));
      const auto hit = ray_cast(scene, pose_t.translation(), dir);
      double value = 0.0;
      if (hit) {
        const Primitive& p = scene.primitives[hit->primitive];
        value = p.thermal_value(p.albedo.evaluate(hit->s, hit->t), hit->s, hit->t);
        out.thermal_primitive[i] = int(hit->primitive);
        const Eigen::Vector3d world = pose_t.translation() + hit->distance * dir;
        const Eigen::Vector3d pv = world_to_v * world;
        if (pv.z() > 0) {
          const Eigen::Vector2d x = kv.project(pv);
          const auto back = ray_cast(scene, pose_v.translation(), world - pose_v.translation());
          const bool seen = back && back->distance > 1.0 - 1e-7;
          if (kv.contains(x.x(), x.y()) && seen) {
            out.correspondence[i] = x.x();
            out.correspondence[tplane + i] = x.y();
            out.correspondence[2 * tplane + i] = 1.0;
          }
        }
      }
      if (scene.thermal_noise > 0) value += scene.thermal_noise * noise(rng);
      f.thermal[i] = std::clamp(value, 0.0, 1.0);
    }
  return out;
}

namespace {

RigSpec desk_rig() {
  RigSpec rig;
  rig.visible = {150.0, 150.0, 79.5, 59.5, 160, 120};
  rig.thermal = {118.0, 118.0, 63.5, 47.5, 128, 96};
  rig.visible_to_thermal_offset = PoseSE3::from_axis_angle({0.0, 0.6 * kDegree, 0.0}, {0.06, 0.0, 0.0});
  return rig;
}

}  // namespace

SceneSpec random_geometry_scene(std::uint64_t seed, std::size_t frames) {
  std::mt19937_64 rng(splitmix(seed ^ 0x67656f6dULL));
  const auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SceneSpec scene;
  scene.seed = seed;
  scene.rig = desk_rig();
  scene.light_direction = {uni(-0.5, 0.5), uni(0.2, 0.8), 1.0};
  const auto noise_tex = [&](double cell_lo, double cell_hi) {
    return TextureSpec{TextureKind::kNoise, uni(cell_lo, cell_hi), uni(0.05, 0.3), uni(0.7, 0.95), std::uint64_t(rng())};
  };

  Primitive back;
  back.pose = PoseSE3::from_axis_angle({uni(-0.1, 0.1), uni(-0.2, 0.2), 0.0}, {uni(-0.3, 0.3), 0.0, uni(3.5, 4.5)});
  back.size = {10.0, 8.0, 0.0};
  back.albedo = noise_tex(0.25, 0.45);
  back.emission = noise_tex(0.3, 0.6);
  back.rho = uni(0.3, 0.8);
  back.temperature = uni(0.1, 0.3);
  scene.primitives.push_back(back);

  Primitive floor;
  floor.pose = PoseSE3::from_axis_angle({std::numbers::pi / 2, 0.0, 0.0}, {0.0, uni(0.9, 1.2), 2.5});
  floor.size = {10.0, 8.0, 0.0};
  floor.albedo = TextureSpec{TextureKind::kChecker, uni(0.2, 0.4), 0.25, 0.8, 0};
  floor.emission = noise_tex(0.3, 0.6);
  floor.rho = 0.5;
  floor.temperature = 0.15;
  scene.primitives.push_back(floor);

  const int objects = int(uni(2.0, 5.0));
  for (int i = 0; i < objects; ++i) {
    Primitive p;
    p.kind = uni(0, 1) < 0.7 ? PrimitiveKind::kBox : PrimitiveKind::kPlane;
    const double z = uni(1.6, 3.2);
    p.pose = PoseSE3::from_axis_angle({uni(-0.3, 0.3), uni(-0.8, 0.8), uni(-0.2, 0.2)},
                                      {uni(-0.3, 0.3) * z, uni(-0.25, 0.2) * z, z});
    p.size = {uni(0.3, 0.8), uni(0.3, 0.8), uni(0.3, 0.8)};
    p.albedo = uni(0, 1) < 0.5 ? noise_tex(0.08, 0.2) : TextureSpec{TextureKind::kChecker, uni(0.08, 0.2), 0.15, 0.85, 0};
    p.emission = noise_tex(0.1, 0.3);
    p.rho = uni(0.2, 0.8);
    p.temperature = uni(0.2, 0.5);
    scene.primitives.push_back(p);
  }

  PoseSE3 pose = PoseSE3::identity();
  for (std::size_t f = 0; f < std::max<std::size_t>(frames, 1); ++f) {
    scene.trajectory.push_back(pose);
    pose = pose * PoseSE3::from_axis_angle({uni(-1, 1) * kDegree, uni(-1, 1) * kDegree, uni(-0.5, 0.5) * kDegree},
                                           {uni(-0.02, 0.02), uni(-0.01, 0.01), uni(-0.02, 0.02)});
  }
  scene.validate();
  return scene;
}

SceneSpec flat_wall_scene(std::uint64_t seed, double distance) {
  SceneSpec scene;
  scene.seed = seed;
  scene.rig = desk_rig();
  Primitive wall;
  wall.pose = PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), {0.0, 0.0, distance});
  wall.size = {12.0, 12.0, 0.0};
  wall.albedo = TextureSpec{TextureKind::kConstant, 1.0, 0.6, 0.6, 0};
  wall.emission = TextureSpec{TextureKind::kNoise, 0.12, 0.0, 1.0, splitmix(seed)};
  wall.rho = 0.0;
  wall.temperature = 0.2;
  scene.primitives.push_back(wall);
  scene.trajectory = {PoseSE3::identity()};
  return scene;
}

// ---- sequence directories -------------------------------------------------------

void write_poses(const std::filesystem::path& path, const std::vector<PoseSE3>& poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write poses: " + path.string());
  char buf[40];
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out << i;
    for (const double v : poses[i].row_major()) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

std::vector<PoseSE3> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open poses file: " + path.string());
  std::vector<PoseSE3> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    std::vector<double> values(12);
    ls >> index;
    for (auto& v : values) ls >> v;
    if (!ls || index != poses.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected frame index " + std::to_string(poses.size()) + " and 12 values");
    }
    poses.push_back(PoseSE3::from_row_major(values));
  }
  return poses;
}

ConfigFile rig_to_config(const RigCalibration& rig) {
  ConfigFile cfg;
  const auto put = [&](const std::string& t, const CameraIntrinsics& k) {
    cfg.set(t + ".fx", k.fx);
    cfg.set(t + ".fy", k.fy);
    cfg.set(t + ".cx", k.cx);
    cfg.set(t + ".cy", k.cy);
    cfg.set(t + ".width", k.width);
    cfg.set(t + ".height", k.height);
  };
  put("visible", rig.visible);
  put("thermal", rig.thermal);
  std::ostringstream pose;
  pose.precision(17);
  const auto rm = rig.visible_to_thermal_offset.row_major();
  for (std::size_t i = 0; i < rm.size(); ++i) pose << (i ? ", " : "") << rm[i];
  cfg.set("offset.thermal_in_visible", pose.str());
  return cfg;
}

RigCalibration rig_from_config(const ConfigFile& cfg) {
  RigCalibration rig;
  rig.visible = intrinsics_from(cfg.table("visible"), "visible");
  rig.thermal = intrinsics_from(cfg.table("thermal"), "thermal");
  rig.visible_to_thermal_offset =
      PoseSE3::from_row_major(parse_list(cfg.get("offset.thermal_in_visible"), 12, "offset.thermal_in_visible"));
  return rig;
}

void write_sequence(const SceneSpec& scene, const std::filesystem::path& dir) {
  scene.validate();
  std::filesystem::create_directories(dir);
  std::vector<PoseSE3> pv, pt;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    const RenderedFrame r = render_frame(scene, scene.trajectory[i], i);
    write_image(dir / index_name("visible", i, "ppm"), r.frame.visible, 8);
    write_image(dir / index_name("thermal", i, "pgm"), r.frame.thermal, 16);
    Tensor depth = r.frame.depth;
    for (auto& d : depth.storage()) d = d * kDepthUnitsPerMeter / 65535.0;
    write_image(dir / index_name("depth", i, "pgm"), depth, 16);
    std::ofstream corr(dir / index_name("correspondence", i, "mft"), std::ios::binary);
    write_tensor(corr, r.correspondence);
    pv.push_back(r.frame.pose_visible);
    pt.push_back(r.frame.pose_thermal);
  }
  write_poses(dir / "poses_visible.txt", pv);
  write_poses(dir / "poses_thermal.txt", pt);
  rig_to_config(scene.rig.calibration()).save(dir / "rig.cfg");
}

Sequence read_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a sequence directory: " + dir.string());
  Sequence seq;
  seq.rig = rig_from_config(ConfigFile::load(dir / "rig.cfg"));
  const auto pv = read_poses(dir / "poses_visible.txt");
  const auto pt = read_poses(dir / "poses_thermal.txt");
  if (pv.size() != pt.size()) throw std::runtime_error("visible and thermal pose files differ in length");
  for (std::size_t i = 0; i < pv.size(); ++i) {
    MultiModalFrame f;
    f.index = i;
    f.pose_visible = pv[i];
    f.pose_thermal = pt[i];
    f.visible = read_image(dir / index_name("visible", i, "ppm"));
    f.thermal = read_image(dir / index_name("thermal", i, "pgm"));
    f.depth = read_image(dir / index_name("depth", i, "pgm"));
    for (auto& d : f.depth.storage()) d = d * 65535.0 / kDepthUnitsPerMeter;
    seq.frames.push_back(std::move(f));
    const auto corr_path = dir / index_name("correspondence", i, "mft");
    if (std::filesystem::exists(corr_path)) {
      std::ifstream in(corr_path, std::ios::binary);
      seq.correspondences.push_back(read_tensor<double>(in));
    } else {
      seq.correspondences.emplace_back();
    }
  }
  return seq;
}

// ---- SR dataset ------------------------------------------------------------------------

DatasetFamily DatasetFamily::from_config(const ConfigFile& cfg) {
  DatasetFamily f;
  f.count = std::size_t(cfg.get_int("count", (long long)f.count));
  f.test_fraction = cfg.get_double("test_fraction", f.test_fraction);
  f.image_size = std::size_t(cfg.get_int("image_size", (long long)f.image_size));
  f.rho = cfg.get_double("rho", f.rho);
  f.salient_fraction = cfg.get_double("salient_fraction", f.salient_fraction);
  f.thermal_noise = cfg.get_double("thermal_noise", f.thermal_noise);
  f.seed = std::uint64_t(cfg.get_int("seed", (long long)f.seed));
  if (f.image_size < 96 || f.image_size > 512 || f.image_size % 8 != 0) {
    throw ConfigError("dataset image_size must be a multiple of 8 in [96, 512]");
  }
  if (f.test_fraction < 0 || f.test_fraction > 1) throw ConfigError("dataset test_fraction must lie in [0,1]");
  if (f.rho < 0 || f.rho > 1) throw ConfigError("dataset rho must lie in [0,1]");
  return f;
}

SceneSpec random_sr_scene(const DatasetFamily& family, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix(seed));
  const auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto pick_kind = [&] {
    const double r = uni(0, 1);
    return r < 0.4 ? TextureKind::kNoise : r < 0.75 ? TextureKind::kChecker : TextureKind::kGradient;
  };

  SceneSpec scene;
  scene.seed = seed;
  scene.thermal_noise = family.thermal_noise;
  const std::size_t n = family.image_size;
  CameraIntrinsics k;
  k.width = k.height = n;
  k.fx = k.fy = 0.96 * double(n);  // ~55 degree field of view
  k.cx = k.cy = (double(n) - 1) / 2;
  scene.rig.visible = scene.rig.thermal = k;
  scene.trajectory = {PoseSE3::identity()};
  scene.light_direction = {uni(-0.6, 0.6), uni(-0.6, 0.6), 1.0};
  scene.ambient = uni(0.25, 0.45);

  const auto texture = [&](TextureKind kind, double cell_lo, double cell_hi, double lo, double hi) {
    return TextureSpec{kind, uni(cell_lo, cell_hi), lo, hi, std::uint64_t(rng())};
  };
  const auto tint = [&] { return Eigen::Vector3d(uni(0.6, 1.0), uni(0.6, 1.0), uni(0.6, 1.0)); };

  Primitive wall;
  wall.kind = PrimitiveKind::kPlane;
  wall.pose = PoseSE3::from_axis_angle({uni(-0.25, 0.25), uni(-0.25, 0.25), uni(-0.3, 0.3)},
                                       {uni(-0.5, 0.5), uni(-0.5, 0.5), uni(5.0, 7.0)});
  wall.size = {30.0, 30.0, 0.0};
  wall.albedo = texture(pick_kind(), 0.5, 1.2, uni(0.1, 0.4), uni(0.6, 0.95));
  wall.tint = tint();
  wall.emission = texture(TextureKind::kNoise, 0.6, 1.5, 0.0, 1.0);
  wall.rho = family.rho;
  wall.temperature = uni(0.1, 0.35);
  scene.primitives.push_back(wall);

  const int objects = int(uni(3.0, 7.0));
  for (int i = 0; i < objects; ++i) {
    Primitive p;
    const double z = uni(2.0, 4.5);
    const bool salient = uni(0, 1) < family.salient_fraction;
    p.kind = (!salient && uni(0, 1) < 0.5) ? PrimitiveKind::kBox : PrimitiveKind::kPlane;
    const double tilt = salient ? 0.2 : 0.6;
    p.pose = PoseSE3::from_axis_angle({uni(-tilt, tilt), uni(-tilt, tilt), uni(-0.5, 0.5)},
                                      {uni(-0.35, 0.35) * z, uni(-0.35, 0.35) * z, z});
    p.size = {uni(0.6, 1.6), uni(0.6, 1.6), uni(0.4, 1.2)};
    p.tint = tint();
    p.temperature = uni(0.1, 0.45);
    if (salient) {
      p.albedo = texture(TextureKind::kChecker, 0.12, 0.3, uni(0.05, 0.2), uni(0.75, 0.95));
      p.emission = TextureSpec{TextureKind::kConstant, 1.0, uni(0.0, 0.6), 0.0, 0};
      p.rho = 0.0;
    } else {
      p.albedo = texture(pick_kind(), 0.15, 0.5, uni(0.05, 0.35), uni(0.6, 0.95));
      p.emission = texture(TextureKind::kNoise, 0.2, 0.6, 0.0, 1.0);
      p.rho = family.rho;
    }
    scene.primitives.push_back(p);
  }
  return scene;
}

SrSample render_sr_sample(const DatasetFamily& family, std::uint64_t seed) {
  const SceneSpec scene = random_sr_scene(family, seed);
  const RenderedFrame r = render_frame(scene, scene.trajectory[0], 0);
  SrSample s;
  s.visible = r.frame.visible;
  s.thermal = r.frame.thermal;
  s.salient_mask = Tensor(s.thermal.shape());
  for (std::size_t i = 0; i < r.thermal_primitive.size(); ++i) {
    const int p = r.thermal_primitive[i];
    if (p >= 0 && scene.primitives[std::size_t(p)].visible_only()) s.salient_mask[i] = double(p) / 255.0;
  }
  return s;
}

DatasetManifest make_sr_dataset(const DatasetFamily& family, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.root = out_dir;
  m.seed = family.seed;
  const auto n_test = std::size_t(std::lround(double(family.count) * family.test_fraction));
  for (std::size_t i = 0; i < family.count; ++i) {
    const std::uint64_t seed = splitmix(family.seed * 0x9e3779b97f4a7c15ULL + i);
    const SrSample s = render_sr_sample(family, seed);
    SampleRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "img%04zu", i);
    r.id = id;
    r.visible = index_name("visible", i, "ppm");
    r.thermal = index_name("thermal", i, "pgm");
    r.salient_mask = index_name("salient", i, "pgm");
    r.split = i + n_test >= family.count ? Split::kTest : Split::kTrain;
    r.scene_id = "scene" + std::to_string(i);
    r.seed = seed;
    write_image(out_dir / r.visible, s.visible, 8);
    write_image(out_dir / r.thermal, s.thermal, 16);
    write_image(out_dir / r.salient_mask, s.salient_mask, 8);
    m.samples.push_back(std::move(r));
  }
  m.content_hash = m.compute_hash();
  m.save(out_dir / "manifest.json");
  return m;
}

}  // namespace mfsr
