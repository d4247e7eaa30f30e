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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "meshcorr/image.hpp"
#include "meshcorr/network.hpp"
#include "meshcorr/scene_model.hpp"

namespace meshcorr {

/// Aligned per-pixel feature rasters of one view. Every channel is 0 where
/// mask is 0; consult the mask, never the sentinel.
struct FeatureImageSet {
  int width = 0;
  int height = 0;
  FloatImage rgb;            // 3 channels, [0, 1]
  FloatImage inverse_depth;  // 1/m
  FloatImage area;           // m^2, camera-frame triangle area
  FloatImage normal;         // 3 channels, unit, camera frame, facing the camera
  FloatImage edge_ratio;     // shortest / longest triangle edge, (0, 1]
  FloatImage view_angle;     // |cos| between normal and viewing ray, [0, 1]
  Mask mask;

  static FeatureImageSet blank(int w, int h) {
    FeatureImageSet f;
    f.width = w;
    f.height = h;
    f.rgb = FloatImage(w, h, 3);
    f.inverse_depth = FloatImage(w, h);
    f.area = FloatImage(w, h);
    f.normal = FloatImage(w, h, 3);
    f.edge_ratio = FloatImage(w, h);
    f.view_angle = FloatImage(w, h);
    f.mask = Mask(w, h);
    return f;
  }

  const FloatImage& channel(Feature f) const {
    switch (f) {
      case Feature::rgb: return rgb;
      case Feature::inverse_depth: return inverse_depth;
      case Feature::area: return area;
      case Feature::normal: return normal;
      case Feature::edge_ratio: return edge_ratio;
      case Feature::view_angle: return view_angle;
    }
    return rgb;
  }
  FloatImage& channel(Feature f) { return const_cast<FloatImage&>(static_cast<const FeatureImageSet*>(this)->channel(f)); }

  FeatureImageSet crop(int x0, int y0, int w, int h) const {
    FeatureImageSet out;
    out.width = w;
    out.height = h;
    for (Feature f : kAllFeatures) out.channel(f) = channel(f).crop(x0, y0, w, h);
    out.mask = mask.crop(x0, y0, w, h);
    return out;
  }

  bool operator==(const FeatureImageSet&) const = default;
};

/// Camera-frame positions R v + t; depth is the z component (+z forward).
inline std::vector<Vec3> transform_vertices(const Mesh& mesh, const CameraPose& pose) {
  std::vector<Vec3> out;
  out.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) out.push_back(pose.apply(v));
  return out;
}

struct TriangleAttributes {
  double area = 0.0;
  Vec3 normal = Vec3::Zero();
  double edge_ratio = 0.0;
};

inline constexpr double kDegenerateArea = 1e-12;

/// Area, camera-facing unit normal and min/max edge-length ratio of a
/// camera-frame triangle. nullopt when the area is below 1e-12 m^2.
inline std::optional<TriangleAttributes> triangle_attributes(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 cross = (b - a).cross(c - a);
  const double twice_area = cross.norm();
  if (!(0.5 * twice_area >= kDegenerateArea)) return std::nullopt;
  TriangleAttributes attr;
  attr.area = 0.5 * twice_area;
  attr.normal = cross / twice_area;
  const Vec3 centroid = (a + b + c) / 3.0;
  if (attr.normal.dot(-centroid) < 0.0) attr.normal = -attr.normal;
  const std::array<double, 3> edges = {(b - a).norm(), (c - b).norm(), (a - c).norm()};
  attr.edge_ratio = *std::min_element(edges.begin(), edges.end()) / *std::max_element(edges.begin(), edges.end());
  return attr;
}

struct RasterOptions {
  double near_plane = 0.1;
};

namespace detail {

struct ClipVertex {
  Vec3 position;
  Vec3 color;
};

/// Sutherland-Hodgman against the half-space dot(plane, p) >= 0 in camera space.
inline std::vector<ClipVertex> clip_polygon(const std::vector<ClipVertex>& poly, const Eigen::Vector4d& plane) {
  std::vector<ClipVertex> out;
  if (poly.empty()) return out;
  auto dist = [&](const Vec3& p) { return plane.head<3>().dot(p) + plane[3]; };
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const ClipVertex& cur = poly[i];
    const ClipVertex& nxt = poly[(i + 1) % poly.size()];
    const double dc = dist(cur.position);
    const double dn = dist(nxt.position);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc >= 0.0) != (dn >= 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back({cur.position + t * (nxt.position - cur.position), cur.color + t * (nxt.color - cur.color)});
    }
  }
  return out;
}

inline constexpr int kSubpixelBits = 8;
inline constexpr double kSubpixelScale = 1 << kSubpixelBits;
/// Guard band (pixels from the principal point) keeping fixed-point edge
/// functions inside int64.
inline constexpr double kGuardBand = 1 << 20;

struct ScreenVertex {
  double u = 0.0;
  double v = 0.0;
  std::int64_t x = 0;  // fixed point
  std::int64_t y = 0;
  double inv_z = 0.0;
  Vec3 color_over_z = Vec3::Zero();
};

/// Top-left rule for an edge a->b of a triangle whose interior has positive
/// edge function (y down): left edges (dy < 0) and flat top edges (dy == 0, dx > 0).
inline bool owns_edge(std::int64_t dx, std::int64_t dy) { return dy < 0 || (dy == 0 && dx > 0); }

inline std::int64_t edge_function(const ScreenVertex& a, const ScreenVertex& b, std::int64_t px, std::int64_t py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

inline double edge_function(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
}

}  // namespace detail

/// Renders the mesh's feature images from `pose`.
///
/// Pinhole projection u = fx x/z + cx, v = fy y/z + cy with pixel centres
/// sampled at integer (u, v); coverage uses 8-bit sub-pixel fixed point with
/// the top-left fill rule. Inverse depth and colour are interpolated
/// perspective-correctly; area, normal and edge ratio are constant per
/// triangle and computed before clipping. Geometry is clipped at the near
/// plane. The z-buffer keeps the nearest surface; on exact ties the lower
/// triangle index wins.
inline FeatureImageSet rasterize(const Mesh& mesh, const CameraPose& pose, const CameraIntrinsics& intr,
                                 const RasterOptions& options = {}) {
  using namespace detail;
  intr.validate();
  FeatureImageSet out = FeatureImageSet::blank(intr.width, intr.height);
  const std::vector<Vec3> cam = transform_vertices(mesh, pose);
  const double near = options.near_plane;
  const std::array<Eigen::Vector4d, 5> planes = {
      Eigen::Vector4d(0, 0, 1, -near),
      Eigen::Vector4d(-intr.fx, 0, kGuardBand, 0),  // fx x <= G z
      Eigen::Vector4d(intr.fx, 0, kGuardBand, 0),
      Eigen::Vector4d(0, -intr.fy, kGuardBand, 0),
      Eigen::Vector4d(0, intr.fy, kGuardBand, 0),
  };

  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = cam[tri[0]];
    const Vec3& b = cam[tri[1]];
    const Vec3& c = cam[tri[2]];
    if (a.z() <= near && b.z() <= near && c.z() <= near) continue;
    const auto attr = triangle_attributes(a, b, c);
    if (!attr) continue;

    std::vector<ClipVertex> poly = {{a, mesh.colors[tri[0]]}, {b, mesh.colors[tri[1]]}, {c, mesh.colors[tri[2]]}};
    for (const auto& plane : planes) poly = clip_polygon(poly, plane);
    if (poly.size() < 3) continue;

    std::vector<ScreenVertex> screen;
    screen.reserve(poly.size());
    for (const auto& pv : poly) {
      ScreenVertex s;
      const double z = pv.position.z();
      s.u = intr.fx * pv.position.x() / z + intr.cx;
      s.v = intr.fy * pv.position.y() / z + intr.cy;
      s.x = std::llround(s.u * kSubpixelScale);
      s.y = std::llround(s.v * kSubpixelScale);
      s.inv_z = 1.0 / z;
      s.color_over_z = pv.color / z;
      screen.push_back(s);
    }

    for (std::size_t k = 1; k + 1 < screen.size(); ++k) {
      std::array<ScreenVertex, 3> v = {screen[0], screen[k], screen[k + 1]};
      const std::int64_t area2 = edge_function(v[0], v[1], v[2].x, v[2].y);
      if (area2 == 0) continue;
      if (area2 < 0) std::swap(v[1], v[2]);
      const std::int64_t min_x = std::min({v[0].x, v[1].x, v[2].x});
      const std::int64_t max_x = std::max({v[0].x, v[1].x, v[2].x});
      const std::int64_t min_y = std::min({v[0].y, v[1].y, v[2].y});
      const std::int64_t max_y = std::max({v[0].y, v[1].y, v[2].y});
      const auto sub = static_cast<std::int64_t>(kSubpixelScale);
      auto ceil_div = [sub](std::int64_t q) { return q >= 0 ? (q + sub - 1) / sub : -((-q) / sub); };
      auto floor_div = [sub](std::int64_t q) { return q >= 0 ? q / sub : -((-q + sub - 1) / sub); };
      const int x0 = static_cast<int>(std::max<std::int64_t>(ceil_div(min_x), 0));
      const int x1 = static_cast<int>(std::min<std::int64_t>(floor_div(max_x), intr.width - 1));
      const int y0 = static_cast<int>(std::max<std::int64_t>(ceil_div(min_y), 0));
      const int y1 = static_cast<int>(std::min<std::int64_t>(floor_div(max_y), intr.height - 1));
      if (x0 > x1 || y0 > y1) continue;

      const std::array<std::pair<int, int>, 3> edges = {{{1, 2}, {2, 0}, {0, 1}}};
      std::array<bool, 3> owns{};
      for (int e = 0; e < 3; ++e) {
        const auto& [i, j] = edges[e];
        owns[e] = owns_edge(v[j].x - v[i].x, v[j].y - v[i].y);
      }
      const double area_f = edge_function(v[0], v[1], v[2].u, v[2].v);
      if (area_f == 0.0) continue;

      for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
          const std::int64_t sx = static_cast<std::int64_t>(px) * sub;
          const std::int64_t sy = static_cast<std::int64_t>(py) * sub;
          bool inside = true;
          for (int e = 0; e < 3 && inside; ++e) {
            const auto& [i, j] = edges[e];
            const std::int64_t w = edge_function(v[i], v[j], sx, sy);
            inside = w > 0 || (w == 0 && owns[e]);
          }
          if (!inside) continue;

          std::array<double, 3> lambda{};
          for (int e = 0; e < 3; ++e) {
            const auto& [i, j] = edges[e];
            lambda[e] = edge_function(v[i], v[j], static_cast<double>(px), static_cast<double>(py)) / area_f;
          }
          const double inv_z = lambda[0] * v[0].inv_z + lambda[1] * v[1].inv_z + lambda[2] * v[2].inv_z;
          if (!(inv_z > out.inverse_depth.at(px, py))) continue;

          const Vec3 color =
              (lambda[0] * v[0].color_over_z + lambda[1] * v[1].color_over_z + lambda[2] * v[2].color_over_z) / inv_z;
          const Vec3 ray = Vec3((px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, 1.0).normalized();
          out.inverse_depth.at(px, py) = inv_z;
          for (int ch = 0; ch < 3; ++ch) {
            out.rgb.at(px, py, ch) = std::clamp(color[ch], 0.0, 1.0);
            out.normal.at(px, py, ch) = attr->normal[ch];
          }
          out.area.at(px, py) = attr->area;
          out.edge_ratio.at(px, py) = attr->edge_ratio;
          out.view_angle.at(px, py) = std::min(1.0, std::abs(attr->normal.dot(ray)));
          out.mask.at(px, py) = 1;
        }
      }
    }
  }
  return out;
}

}  // namespace meshcorr
