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

// Brute-force per-pixel ray casting (Moller-Trumbore), independent of the
// rasterizer's projection, clipping and fill rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Geometry>

#include "meshcorr/scene_model.hpp"

namespace meshcorr::testing {

struct RayHit {
  double depth = std::numeric_limits<double>::infinity();  // camera-frame z
  std::int64_t triangle = -1;
};

/// Ray o + t d against triangle (a, b, c); returns t or NaN on a miss.
inline double moller_trumbore(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::numeric_limits<double>::quiet_NaN();
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::numeric_limits<double>::quiet_NaN();
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::numeric_limits<double>::quiet_NaN();
  return e2.dot(q) * inv;
}

/// Nearest surface along the ray through image point (u, v). The ray
/// direction has unit z, so the returned t is the camera-frame depth.
inline RayHit cast(const std::vector<Vec3>& cam_vertices, const Mesh& mesh, const CameraIntrinsics& intr, double u,
                   double v, double near_plane = 0.1) {
  const Vec3 dir((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
  RayHit hit;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const double d = moller_trumbore(Vec3::Zero(), dir, cam_vertices[tri[0]], cam_vertices[tri[1]], cam_vertices[tri[2]]);
    if (std::isnan(d) || d < near_plane) continue;
    if (d < hit.depth) {
      hit.depth = d;
      hit.triangle = static_cast<std::int64_t>(t);
    }
  }
  return hit;
}

/// Camera-frame vertices computed with an explicit 4x4 homogeneous matrix.
inline std::vector<Vec3> homogeneous_transform(const Mesh& mesh, const CameraPose& pose) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = pose.rotation;
  m.block<3, 1>(0, 3) = pose.translation;
  std::vector<Vec3> out;
  for (const auto& v : mesh.vertices) out.push_back((m * v.homogeneous()).hnormalized());
  return out;
}

/// Distance in pixels from (u, v) to the nearest edge of any triangle's
/// image, after clipping the triangle at the near plane.
inline double edge_distance(const std::vector<Vec3>& cam_vertices, const Mesh& mesh, const CameraIntrinsics& intr,
                            double u, double v, double near_plane = 0.1) {
  const Eigen::Vector2d p(u, v);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& tri : mesh.triangles) {
    std::vector<Vec3> poly;
    for (int k = 0; k < 3; ++k) {
      const Vec3& a = cam_vertices[tri[k]];
      const Vec3& b = cam_vertices[tri[(k + 1) % 3]];
      if (a.z() >= near_plane) poly.push_back(a);
      if ((a.z() >= near_plane) != (b.z() >= near_plane)) {
        poly.push_back(a + (b - a) * ((near_plane - a.z()) / (b.z() - a.z())));
      }
    }
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const Vec3& a3 = poly[k];
      const Vec3& b3 = poly[(k + 1) % poly.size()];
      const Eigen::Vector2d a(intr.fx * a3.x() / a3.z() + intr.cx, intr.fy * a3.y() / a3.z() + intr.cy);
      const Eigen::Vector2d b(intr.fx * b3.x() / b3.z() + intr.cx, intr.fy * b3.y() / b3.z() + intr.cy);
      const Eigen::Vector2d ab = b - a;
      const double len2 = ab.squaredNorm();
      const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      best = std::min(best, (a + t * ab - p).norm());
    }
  }
  return best;
}

/// True if the pixel straddles a triangle or silhouette edge: an edge's
/// image passes within one pixel of (u, v), or the oracle sees a different
/// surface (or none) somewhere within one pixel of it.
inline bool near_edge(const std::vector<Vec3>& cam_vertices, const Mesh& mesh, const CameraIntrinsics& intr, double u,
                      double v, std::int64_t center_triangle) {
  if (edge_distance(cam_vertices, mesh, intr, u, v) <= 1.0) return true;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const RayHit h = cast(cam_vertices, mesh, intr, u + 0.5 * dx, v + 0.5 * dy);
      if (h.triangle != center_triangle) return true;
    }
  }
  return false;
}

}  // namespace meshcorr::testing
