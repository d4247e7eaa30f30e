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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meshcorr/groundtruth.hpp"
#include "meshcorr/loss_metrics.hpp"
#include "meshcorr/network.hpp"
#include "meshcorr/trainer.hpp"

namespace meshcorr {

/// Smallest corrected inverse depth still treated as a valid surface.
inline constexpr double kMinInverseDepth = 1e-6;

struct CorrectedDepth {
  FloatImage inverse_depth;
  FloatImage depth;
  Mask mask;
};

/// i* = i_c - delta / A on pixels valid in both inputs; d* = 1 / i* where
/// i* > 1e-6, otherwise the pixel is dropped from the mask.
inline CorrectedDepth correct(const FloatImage& inverse_depth, const Mask& valid, const ErrorImage& prediction) {
  if (!inverse_depth.same_size(prediction.width(), prediction.height()) ||
      !valid.same_size(prediction.width(), prediction.height())) {
    throw ShapeError("correct: inverse depth and prediction differ in size");
  }
  CorrectedDepth out{FloatImage(inverse_depth.width, inverse_depth.height),
                     FloatImage(inverse_depth.width, inverse_depth.height),
                     Mask(inverse_depth.width, inverse_depth.height)};
  for (std::size_t i = 0; i < out.mask.data.size(); ++i) {
    if (valid.data[i] == 0 || prediction.mask.data[i] == 0) continue;
    const double corrected = inverse_depth.data[i] - prediction.delta.data[i] / prediction.scale;
    if (!(corrected > kMinInverseDepth)) continue;
    out.inverse_depth.data[i] = corrected;
    out.depth.data[i] = 1.0 / corrected;
    out.mask.data[i] = 1;
  }
  return out;
}

inline CorrectedDepth correct(const FeatureImageSet& camera, const ErrorImage& prediction) {
  return correct(camera.inverse_depth, camera.mask, prediction);
}

struct EvalOptions {
  int crop_height = 64;
  int crop_width = 96;
  int batch_size = 8;
  /// Metrics on depth (1/i) instead of inverse depth.
  bool depth_space = false;
};

/// Network prediction for each (centre-cropped) frame; valid where the
/// camera render has coverage.
inline std::vector<ErrorImage> predict_errors(const Model<float>& model, std::span<const Sample> frames,
                                              const EvalOptions& options = {},
                                              const FeatureSelection& disabled = FeatureSelection::none()) {
  std::vector<ErrorImage> out;
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(options.batch_size)) {
    const std::size_t end = std::min(frames.size(), start + static_cast<std::size_t>(options.batch_size));
    std::vector<Sample> crops;
    for (std::size_t i = start; i < end; ++i) crops.push_back(center_crop(frames[i], options.crop_height, options.crop_width));
    std::vector<const FeatureImageSet*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c.features);
    const auto pred = model.predict(make_input<float>(ptrs, model.selection(), model.normalizer(), disabled));
    for (std::size_t n = 0; n < crops.size(); ++n) {
      ErrorImage e = ErrorImage::zeros(options.crop_width, options.crop_height, crops[n].target.scale);
      for (int y = 0; y < options.crop_height; ++y) {
        for (int x = 0; x < options.crop_width; ++x) {
          if (crops[n].features.mask.at(x, y) == 0) continue;
          e.delta.at(x, y) = static_cast<double>(pred.at(static_cast<int>(n), y, x, 0));
          e.mask.at(x, y) = 1;
        }
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

/// Baseline (camera inverse depth) and corrected metrics against the laser
/// inverse depth, over the joint camera/laser mask of each frame.
///
/// Every pixel of the joint mask counts in both reports; a corrected value
/// that falls to or below 1e-6 enters the corrected metrics at 1e-6.
struct EvaluationResult {
  MetricsReport baseline;
  MetricsReport corrected;
};

inline EvaluationResult evaluate_predictions(std::span<const Sample> frames, std::span<const ErrorImage> predictions,
                                             const EvalOptions& options = {}, const std::string& label = "cnn") {
  if (frames.empty()) throw std::invalid_argument("evaluate: no frames");
  if (frames.size() != predictions.size()) throw std::invalid_argument("evaluate: one prediction per frame needed");
  MetricsAccumulator base, fixed;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Sample s = center_crop(frames[f], options.crop_height, options.crop_width);
    const ErrorImage& pred = predictions[f];
    const int w = options.crop_width;
    const int h = options.crop_height;
    FloatImage laser(w, h), camera(w, h), corrected(w, h);
    const Mask& joint = s.target.mask;
    for (std::size_t i = 0; i < joint.data.size(); ++i) {
      if (joint.data[i] == 0) continue;
      const double ic = s.features.inverse_depth.data[i];
      const double il = ic - s.target.delta.data[i] / s.target.scale;
      double ifix = pred.mask.data[i] != 0 ? ic - pred.delta.data[i] / pred.scale : ic;
      if (!(ifix > kMinInverseDepth)) ifix = kMinInverseDepth;
      if (options.depth_space) {
        laser.data[i] = 1.0 / il;
        camera.data[i] = 1.0 / ic;
        corrected.data[i] = 1.0 / ifix;
      } else {
        laser.data[i] = il;
        camera.data[i] = ic;
        corrected.data[i] = ifix;
      }
    }
    base.add(camera, laser, joint);
    fixed.add(corrected, laser, joint);
  }
  return {base.report("baseline"), fixed.report(label)};
}

inline EvaluationResult evaluate(const Model<float>& model, std::span<const Sample> frames,
                                 const EvalOptions& options = {}) {
  const auto preds = predict_errors(model, frames, options);
  return evaluate_predictions(frames, preds, options);
}

// ---------------------------------------------------------------- ablation

enum class AblationMode {
  cheap,     // zero (standardised) input channels at inference
  faithful,  // retrain without the feature
};

struct AblationOptions {
  AblationMode mode = AblationMode::cheap;
  EvalOptions eval;
  /// Fine-tuning epochs for the reduced-feature row; 0 skips that row.
  int fine_tune_epochs = 0;
};

/// The feature set kept in the reduced-input experiment: rgb, inverse
/// depth and normals (area, view angle and edge ratio dropped).
inline FeatureSelection reduced_feature_set() {
  FeatureSelection s = FeatureSelection::none();
  s.set(Feature::rgb, true);
  s.set(Feature::inverse_depth, true);
  s.set(Feature::normal, true);
  return s;
}

/// One row per configuration, corrected metrics on `eval_frames`: the full
/// model, each of its features disabled in turn, the reduced set, and
/// (with a training set and fine_tune_epochs > 0) the reduced set after
/// fine-tuning.
inline std::vector<MetricsReport> ablation_study(const Model<float>& model, std::span<const Sample> eval_frames,
                                                 const AblationOptions& options = {},
                                                 std::span<const Sample> train_frames = {},
                                                 const TrainConfig& train_cfg = {}) {
  std::vector<MetricsReport> rows;
  auto corrected = [&](const Model<float>& m, const FeatureSelection& disabled, const std::string& label) {
    const auto preds = predict_errors(m, eval_frames, options.eval, disabled);
    return evaluate_predictions(eval_frames, preds, options.eval, label).corrected;
  };
  auto without = [&](const FeatureSelection& dropped, const std::string& label) {
    if (options.mode == AblationMode::cheap) return corrected(model, dropped, label);
    FeatureSelection kept = model.selection();
    for (Feature f : kAllFeatures) {
      if (dropped.has(f)) kept.set(f, false);
    }
    if (train_frames.empty()) throw std::invalid_argument("faithful ablation needs a training set");
    return corrected(train(train_frames, train_cfg, kept).model, FeatureSelection::none(), label);
  };

  rows.push_back(corrected(model, FeatureSelection::none(), "all"));
  for (Feature f : kAllFeatures) {
    if (!model.selection().has(f)) continue;
    FeatureSelection dropped = FeatureSelection::none();
    dropped.set(f, true);
    rows.push_back(without(dropped, "no_" + std::string(feature_name(f))));
  }
  FeatureSelection reduced = reduced_feature_set();
  FeatureSelection dropped = FeatureSelection::none();
  for (Feature f : kAllFeatures) {
    if (model.selection().has(f) && !reduced.has(f)) dropped.set(f, true);
  }
  if (dropped.any() && reduced.subset_of(model.selection())) {
    rows.push_back(without(dropped, "reduced"));
    if (options.fine_tune_epochs > 0 && !train_frames.empty()) {
      const auto tuned = fine_tune(model, train_frames, train_cfg, reduced, options.fine_tune_epochs);
      rows.push_back(corrected(tuned.model, FeatureSelection::none(), "reduced_fine_tuned"));
    }
  }
  return rows;
}

// ---------------------------------------------------------------- overlay

/// Diverging encoding of a signed error: red = positive (camera surface too
/// close), blue = negative, intensity |delta| / limit; invalid pixels grey.
inline FloatImage error_overlay(const ErrorImage& error, double limit = 0.0) {
  if (!(limit > 0.0)) {
    for (std::size_t i = 0; i < error.mask.data.size(); ++i) {
      if (error.mask.data[i] != 0) limit = std::max(limit, std::abs(error.delta.data[i]));
    }
    if (!(limit > 0.0)) limit = 1.0;
  }
  FloatImage out(error.width(), error.height(), 3);
  for (int y = 0; y < error.height(); ++y) {
    for (int x = 0; x < error.width(); ++x) {
      if (error.mask.at(x, y) == 0) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.25;
        continue;
      }
      const double v = std::clamp(error.delta.at(x, y) / limit, -1.0, 1.0);
      out.at(x, y, 0) = v > 0.0 ? v : 0.0;
      out.at(x, y, 2) = v < 0.0 ? -v : 0.0;
    }
  }
  return out;
}

}  // namespace meshcorr
