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

#include <cmath>

#include "meshcorr/rasterizer.hpp"

namespace meshcorr {

/// Signed per-pixel inverse-depth error, scaled by `scale` (A). Positive
/// means the camera surface is nearer than the laser surface.
struct ErrorImage {
  FloatImage delta;
  Mask mask;
  double scale = 1.0;

  int width() const { return delta.width; }
  int height() const { return delta.height; }

  static ErrorImage zeros(int w, int h, double scale = 1.0) { return {FloatImage(w, h), Mask(w, h), scale}; }

  ErrorImage crop(int x0, int y0, int w, int h) const {
    return {delta.crop(x0, y0, w, h), mask.crop(x0, y0, w, h), scale};
  }

  bool operator==(const ErrorImage&) const = default;
};

struct GroundTruthConfig {
  /// A; 1 for inverse depth, fx * baseline for stereo disparity units.
  double scale = 1.0;

  static GroundTruthConfig disparity(double fx, double baseline) { return {fx * baseline}; }

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("ground-truth scale A must be positive");
  }
};

/// delta = A (1/d_c - 1/d_l) on pixels covered in both renders.
inline ErrorImage compute_gt(const FeatureImageSet& camera, const FeatureImageSet& laser,
                             const GroundTruthConfig& cfg = {}) {
  cfg.validate();
  if (camera.width != laser.width || camera.height != laser.height) {
    throw ShapeError("compute_gt: camera render is " + std::to_string(camera.width) + "x" +
                     std::to_string(camera.height) + ", laser render is " + std::to_string(laser.width) + "x" +
                     std::to_string(laser.height));
  }
  ErrorImage out = ErrorImage::zeros(camera.width, camera.height, cfg.scale);
  for (std::size_t i = 0; i < out.delta.data.size(); ++i) {
    if (camera.mask.data[i] == 0 || laser.mask.data[i] == 0) continue;
    out.delta.data[i] = cfg.scale * camera.inverse_depth.data[i] - cfg.scale * laser.inverse_depth.data[i];
    out.mask.data[i] = 1;
  }
  return out;
}

}  // namespace meshcorr
