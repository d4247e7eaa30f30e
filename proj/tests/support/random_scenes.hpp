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

// Random small scenes for rasterizer oracle tests, and the oracle
// comparison itself.

#include <cmath>
#include <cstdint>

#include "meshcorr/random.hpp"
#include "meshcorr/rasterizer.hpp"
#include "support/raycast_oracle.hpp"

namespace meshcorr::testing {

inline const CameraIntrinsics kOracleIntrinsics{80.0, 80.0, 47.5, 31.5, 96, 64};

struct OracleScene {
  Mesh mesh;
  CameraPose pose;
};

/// Up to 50 triangles in front of a randomly placed camera; about one in
/// ten straddles the near plane.
inline OracleScene random_oracle_scene(Rng& rng, const CameraIntrinsics& intr = kOracleIntrinsics) {
  OracleScene s;
  const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  s.pose.rotation = q.normalized().toRotationMatrix();
  s.pose.translation = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  const CameraPose cam_to_world = s.pose.inverse();

  const std::size_t count = 1 + rng.index(50);
  for (std::size_t t = 0; t < count; ++t) {
    const bool straddle = rng.uniform() < 0.1;
    const double depth = straddle ? rng.uniform(0.5, 2.0) : rng.uniform(1.0, 12.0);
    const Vec3 center(depth * (rng.uniform(0, intr.width) - intr.cx) / intr.fx,
                      depth * (rng.uniform(0, intr.height) - intr.cy) / intr.fy, depth);
    const double size = rng.uniform(0.2, 0.4) * depth;
    for (int k = 0; k < 3; ++k) {
      Vec3 p = center + size * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      if (straddle && k == 0) p.z() = rng.uniform(-1.0, 0.05);
      s.mesh.vertices.push_back(cam_to_world.apply(p));
      s.mesh.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    const auto base = static_cast<std::uint32_t>(3 * t);
    s.mesh.triangles.push_back({base, base + 1, base + 2});
  }
  return s;
}

struct OracleComparison {
  std::size_t covered = 0;     // pixels covered by the rasterizer or the oracle
  std::size_t matched = 0;     // same coverage and |inverse depth diff| <= tolerance
  std::size_t off_edge = 0;    // mismatches not adjacent to a triangle edge
  double max_error = 0.0;      // largest inverse-depth difference where both cover
};

/// Pixel-by-pixel comparison of `rasterize` against the ray-cast oracle.
inline OracleComparison compare_with_oracle(const OracleScene& s, const CameraIntrinsics& intr = kOracleIntrinsics,
                                            double tolerance = 1e-5) {
  const FeatureImageSet img = rasterize(s.mesh, s.pose, intr);
  const auto cam = homogeneous_transform(s.mesh, s.pose);
  OracleComparison r;
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const RayHit hit = cast(cam, s.mesh, intr, x, y);
      const bool raster = img.mask.at(x, y) != 0;
      const bool oracle = hit.triangle >= 0;
      if (!raster && !oracle) continue;
      ++r.covered;
      bool ok = raster == oracle;
      if (ok) {
        const double err = std::abs(img.inverse_depth.at(x, y) - 1.0 / hit.depth);
        r.max_error = std::max(r.max_error, err);
        ok = err <= tolerance;
      }
      if (ok) {
        ++r.matched;
      } else if (!near_edge(cam, s.mesh, intr, x, y, hit.triangle)) {
        ++r.off_edge;
      }
    }
  }
  return r;
}

}  // namespace meshcorr::testing
