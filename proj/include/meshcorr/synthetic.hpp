/*
 * Copyright 2026 The meshcorr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

#include "meshcorr/random.hpp"
#include "meshcorr/scene_model.hpp"

namespace meshcorr {

enum class CorruptionKind { depth_bias, smear, hole };

inline std::string_view corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::depth_bias: return "depth_bias";
    case CorruptionKind::smear: return "smear";
    case CorruptionKind::hole: return "hole";
  }
  return "";
}

inline CorruptionKind parse_corruption(std::string_view name) {
  for (auto k : {CorruptionKind::depth_bias, CorruptionKind::smear, CorruptionKind::hole}) {
    if (corruption_name(k) == name) return k;
  }
  throw FormatError("unknown corruption kind '" + std::string(name) + "'");
}

/// Axis-aligned world-space box.
struct Region {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
  Vec3 center() const { return 0.5 * (min + max); }
};

/// One reconstruction defect applied to the camera mesh.
///
/// depth_bias moves every vertex inside `region` towards the camera along
/// the first frame's optical axis by `magnitude` metres. hole deletes the
/// triangles whose centroid lies in `region`. smear adds a spurious sheet
/// across the region, perpendicular to the optical axis at the region's
/// centre depth, coloured by blending the nearest surfaces on either side;
/// `magnitude` is its tessellation step in metres.
struct Corruption {
  CorruptionKind kind = CorruptionKind::depth_bias;
  double magnitude = 0.0;
  Region region;
};

/// Street-like scene: ground plane, two facades, an end wall and box
/// obstacles, traversed by a forward-moving camera. World axes follow the
/// camera convention (x right, y down, z forward); the ground is y = 0.
struct SceneSpec {
  std::uint64_t seed = 0;
  double street_length = 24.0;
  double street_width = 8.0;
  double wall_height = 6.0;
  int obstacles_min = 2;
  int obstacles_max = 4;
  double obstacle_size_min = 0.8;
  double obstacle_size_max = 1.8;
  double grid_step = 1.0;
  /// In-plane jitter of interior grid vertices, as a fraction of grid_step.
  double jitter = 0.3;

  int frames = 10;
  double camera_height = 1.5;
  double start_z = 2.0;
  double frame_step = 1.5;
  double yaw_amplitude = 0.06;  // radians
  double sway_amplitude = 0.3;  // metres

  std::vector<Corruption> corruptions;

  /// Used only to check that every corruption is seen in >= 3 frames.
  CameraIntrinsics intrinsics{52.0, 52.0, 51.5, 35.5, 104, 72};

  double half_width() const { return 0.5 * street_width; }

  void validate() const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(street_length) || !positive(street_width) || !positive(wall_height) || !positive(grid_step)) {
      throw std::invalid_argument("scene spec: degenerate scene extents");
    }
    if (frames < 1 || !std::isfinite(frame_step) || !std::isfinite(start_z)) {
      throw std::invalid_argument("scene spec: trajectory needs at least one frame");
    }
    if (obstacles_min < 0 || obstacles_max < obstacles_min || !positive(obstacle_size_min) ||
        obstacle_size_max < obstacle_size_min) {
      throw std::invalid_argument("scene spec: bad obstacle ranges");
    }
    if (!(jitter >= 0.0 && jitter < 0.5)) throw std::invalid_argument("scene spec: jitter must lie in [0, 0.5)");
    const Region bounds = scene_bounds();
    for (const auto& c : corruptions) {
      if (!std::isfinite(c.magnitude)) throw std::invalid_argument("scene spec: non-finite corruption magnitude");
      if (c.kind == CorruptionKind::smear && !(c.magnitude > 0.0)) {
        throw std::invalid_argument("scene spec: smear magnitude is its tessellation step and must be positive");
      }
      if (!c.region.min.allFinite() || !c.region.max.allFinite() ||
          (c.region.min.array() > c.region.max.array()).any()) {
        throw std::invalid_argument("scene spec: malformed corruption region");
      }
      if ((c.region.min.array() < bounds.min.array()).any() || (c.region.max.array() > bounds.max.array()).any()) {
        throw std::invalid_argument("scene spec: corruption region outside the scene bounds");
      }
    }
  }

  /// Everything generated lies inside this box (with a 1 m margin).
  Region scene_bounds() const {
    return {Vec3(-half_width() - 1.0, -wall_height - 1.0, -6.0), Vec3(half_width() + 1.0, 1.0, street_length + 1.0)};
  }
};

struct SyntheticScene {
  Mesh laser;
  Mesh camera;
  Trajectory trajectory;
};

namespace detail {

/// Colour channel snapped to the 8-bit grid so PLY round trips are exact.
inline double quantize_color(double c) { return std::round(std::clamp(c, 0.0, 1.0) * 255.0) / 255.0; }

inline Vec3 quantize_color(const Vec3& c) {
  return {quantize_color(c.x()), quantize_color(c.y()), quantize_color(c.z())};
}

/// Planar rectangle origin + s*u_axis + t*v_axis, s in [0, u_len], t in
/// [0, v_len], split into a jittered grid of triangles.
inline void add_grid(Mesh& mesh, Rng& rng, const Vec3& origin, const Vec3& u_axis, double u_len, const Vec3& v_axis,
                     double v_len, double step, double jitter, const Vec3& base_color, double color_noise) {
  const int nu = std::max(1, static_cast<int>(std::ceil(u_len / step - 1e-9)));
  const int nv = std::max(1, static_cast<int>(std::ceil(v_len / step - 1e-9)));
  const auto first = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int j = 0; j <= nv; ++j) {
    for (int i = 0; i <= nu; ++i) {
      double s = u_len * i / nu;
      double t = v_len * j / nv;
      if (i > 0 && i < nu) s += jitter * (u_len / nu) * rng.uniform(-1.0, 1.0);
      if (j > 0 && j < nv) t += jitter * (v_len / nv) * rng.uniform(-1.0, 1.0);
      mesh.vertices.push_back(origin + s * u_axis + t * v_axis);
      const Vec3 noise(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      mesh.colors.push_back(quantize_color(base_color + color_noise * noise));
    }
  }
  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nu; ++i) {
      const std::uint32_t a = first + static_cast<std::uint32_t>(j * (nu + 1) + i);
      const std::uint32_t b = a + 1;
      const std::uint32_t c = a + static_cast<std::uint32_t>(nu + 1);
      const std::uint32_t d = c + 1;
      if (rng.index(2) == 0) {
        mesh.triangles.push_back({a, b, d});
        mesh.triangles.push_back({a, d, c});
      } else {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({b, d, c});
      }
    }
  }
}

inline Vec3 random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

/// Drops vertices no triangle uses and renumbers.
inline void compact(Mesh& mesh) {
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  for (const auto& t : mesh.triangles) {
    for (auto i : t) remap[i] = 0;
  }
  Mesh out;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (remap[i] < 0) continue;
    remap[i] = static_cast<std::int64_t>(out.vertices.size());
    out.vertices.push_back(mesh.vertices[i]);
    out.colors.push_back(mesh.colors[i]);
  }
  for (const auto& t : mesh.triangles) {
    out.triangles.push_back({static_cast<std::uint32_t>(remap[t[0]]), static_cast<std::uint32_t>(remap[t[1]]),
                             static_cast<std::uint32_t>(remap[t[2]])});
  }
  mesh = std::move(out);
}

inline Vec3 nearest_vertex_color(const Mesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 color = Vec3::Constant(Mesh::kDefaultGray);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const double d = (mesh.vertices[i] - p).squaredNorm();
    if (d < best) {
      best = d;
      color = mesh.colors[i];
    }
  }
  return color;
}

inline void apply_corruption(Mesh& mesh, const Mesh& laser, const Corruption& c, const Vec3& optical_axis,
                             double jitter, Rng& rng) {
  switch (c.kind) {
    case CorruptionKind::depth_bias:
      for (auto& v : mesh.vertices) {
        if (c.region.contains(v)) v -= c.magnitude * optical_axis;
      }
      break;
    case CorruptionKind::hole: {
      std::vector<std::array<std::uint32_t, 3>> kept;
      for (const auto& t : mesh.triangles) {
        const Vec3 centroid = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
        if (!c.region.contains(centroid)) kept.push_back(t);
      }
      mesh.triangles = std::move(kept);
      compact(mesh);
      break;
    }
    case CorruptionKind::smear: {
      // Sheet spanning the region's lateral extent at its centre depth.
      const Vec3 side = Vec3::UnitY().cross(optical_axis).normalized();  // camera +x in world
      const Vec3 center = c.region.center();
      const Vec3 extent = c.region.max - c.region.min;
      const double width = std::abs(side.x()) * extent.x() + std::abs(side.z()) * extent.z();
      const double height = c.region.max.y() - c.region.min.y();
      const Vec3 origin = center - 0.5 * width * side - Vec3(0, 0.5 * height, 0);
      const Vec3 left = nearest_vertex_color(laser, origin);
      const Vec3 right = nearest_vertex_color(laser, origin + width * side);
      const std::size_t first = mesh.vertices.size();
      add_grid(mesh, rng, origin, side, width, Vec3::UnitY(), height, c.magnitude, jitter, Vec3::Zero(), 0.0);
      for (std::size_t i = first; i < mesh.vertices.size(); ++i) {
        const double s = std::clamp(side.dot(mesh.vertices[i] - origin) / width, 0.0, 1.0);
        mesh.colors[i] = quantize_color((1.0 - s) * left + s * right);
      }
      break;
    }
  }
}

}  // namespace detail

/// Builds the paired laser/camera meshes and the trajectory for `spec`.
/// Equal specs give identical output.
inline SyntheticScene generate(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticScene scene;
  Mesh& m = scene.laser;
  const double hw = spec.half_width();
  const double z0 = -5.0;
  const double len = spec.street_length - z0;
  const double step = spec.grid_step;
  const double jit = spec.jitter;

  // ground, facades, end wall
  detail::add_grid(m, rng, Vec3(-hw, 0, z0), Vec3::UnitX(), spec.street_width, Vec3::UnitZ(), len, step, jit,
                   detail::random_color(rng, 0.3, 0.45), 0.05);
  detail::add_grid(m, rng, Vec3(-hw, -spec.wall_height, z0), Vec3::UnitZ(), len, Vec3::UnitY(), spec.wall_height,
                   step, jit, detail::random_color(rng, 0.5, 0.8), 0.05);
  detail::add_grid(m, rng, Vec3(hw, -spec.wall_height, z0), Vec3::UnitZ(), len, Vec3::UnitY(), spec.wall_height, step,
                   jit, detail::random_color(rng, 0.5, 0.8), 0.05);
  detail::add_grid(m, rng, Vec3(-hw, -spec.wall_height, spec.street_length), Vec3::UnitX(), spec.street_width,
                   Vec3::UnitY(), spec.wall_height, step, jit, detail::random_color(rng, 0.6, 0.9), 0.05);

  // obstacles parked along both sides, clear of the driving lane
  const int count = spec.obstacles_min + static_cast<int>(rng.index(spec.obstacles_max - spec.obstacles_min + 1));
  for (int i = 0; i < count; ++i) {
    const double sx = rng.uniform(spec.obstacle_size_min, spec.obstacle_size_max);
    const double sy = rng.uniform(spec.obstacle_size_min, spec.obstacle_size_max);
    const double sz = rng.uniform(spec.obstacle_size_min, spec.obstacle_size_max) * 1.5;
    const double lane = 1.2;
    const double room = std::max(0.0, hw - lane - sx - 0.1);
    const double x = (rng.index(2) == 0 ? -1.0 : 1.0) * (lane + rng.uniform(0.0, room)) - 0.5 * sx;
    const double z = rng.uniform(spec.start_z + 4.0, std::max(spec.start_z + 4.0, spec.street_length - sz - 2.0));
    const Vec3 lo(x, -sy, z);
    const Vec3 color = detail::random_color(rng, 0.1, 0.9);
    const double s = std::min({sx, sy, sz, step});
    detail::add_grid(m, rng, lo, Vec3::UnitX(), sx, Vec3::UnitY(), sy, s, jit, color, 0.03);               // front
    detail::add_grid(m, rng, lo + Vec3(0, 0, sz), Vec3::UnitX(), sx, Vec3::UnitY(), sy, s, jit, color, 0.03);  // back
    detail::add_grid(m, rng, lo, Vec3::UnitZ(), sz, Vec3::UnitY(), sy, s, jit, color, 0.03);               // left
    detail::add_grid(m, rng, lo + Vec3(sx, 0, 0), Vec3::UnitZ(), sz, Vec3::UnitY(), sy, s, jit, color, 0.03);  // right
    detail::add_grid(m, rng, lo, Vec3::UnitX(), sx, Vec3::UnitZ(), sz, s, jit, color, 0.03);               // top
  }

  // trajectory: forward motion with gentle sway and yaw
  for (int f = 0; f < spec.frames; ++f) {
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double yaw = spec.yaw_amplitude * std::sin(phase);
    const Vec3 center(spec.sway_amplitude * std::sin(0.7 * phase + 1.0), -spec.camera_height,
                      spec.start_z + f * spec.frame_step);
    const Mat3 cam_to_world = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix();
    CameraPose pose;
    pose.rotation = cam_to_world.transpose();
    pose.translation = -(pose.rotation * center);
    scene.trajectory.poses.push_back(pose);
    scene.trajectory.frames.push_back(f);
  }

  const Vec3 optical_axis = scene.trajectory.poses.front().rotation.transpose() * Vec3::UnitZ();
  scene.camera = scene.laser;
  for (const auto& c : spec.corruptions) detail::apply_corruption(scene.camera, scene.laser, c, optical_axis, jit, rng);
  if (scene.laser.triangles.empty() || scene.camera.triangles.empty()) throw std::invalid_argument("scene is empty");

  for (const auto& c : spec.corruptions) {
    int seen = 0;
    for (const auto& pose : scene.trajectory.poses) {
      const Vec3 p = pose.apply(c.region.center());
      if (p.z() <= 0.1) continue;
      const double u = spec.intrinsics.fx * p.x() / p.z() + spec.intrinsics.cx;
      const double v = spec.intrinsics.fy * p.y() / p.z() + spec.intrinsics.cy;
      if (u >= 0 && v >= 0 && u <= spec.intrinsics.width - 1 && v <= spec.intrinsics.height - 1) ++seen;
    }
    if (seen < 3) {
      throw std::invalid_argument("scene spec: " + std::string(corruption_name(c.kind)) +
                                  " corruption is visible in fewer than 3 frames");
    }
  }
  scene.laser.validate();
  scene.camera.validate();
  return scene;
}

/// The depth-bias task used for training and evaluation: the end wall of
/// the street is reconstructed `magnitude` metres too close.
inline SceneSpec depth_bias_task(std::uint64_t seed, double magnitude = 2.0) {
  SceneSpec spec;
  spec.seed = seed;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  spec.street_length = rng.uniform(20.0, 26.0);
  spec.street_width = rng.uniform(7.0, 10.0);
  spec.wall_height = rng.uniform(5.0, 8.0);
  spec.start_z = rng.uniform(0.0, 3.0);
  const double hw = spec.half_width();
  spec.corruptions.push_back({CorruptionKind::depth_bias, magnitude,
                              Region{Vec3(-hw - 0.5, -spec.wall_height - 0.5, spec.street_length - 0.25),
                                     Vec3(hw + 0.5, 0.5, spec.street_length + 0.25)}});
  return spec;
}

}  // namespace meshcorr
