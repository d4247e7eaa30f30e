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

#include <gtest/gtest.h>

#include <cmath>

#include "meshcorr/correction.hpp"
#include "support/task_data.hpp"

namespace meshcorr {
namespace {

FloatImage constant_image(int w, int h, double v) { return FloatImage(w, h, 1, v); }

Mask full_mask(int w, int h) { return Mask(w, h, 1, 1); }

TEST(Correct, ZeroErrorIsANoOp) {
  const FloatImage inv = constant_image(4, 3, 0.25);
  ErrorImage zero = ErrorImage::zeros(4, 3);
  zero.mask = full_mask(4, 3);
  const auto out = correct(inv, full_mask(4, 3), zero);
  EXPECT_EQ(out.inverse_depth, inv);
  EXPECT_EQ(out.depth, constant_image(4, 3, 4.0));
  EXPECT_EQ(out.mask, full_mask(4, 3));
}

TEST(Correct, WorkedExample) {
  ErrorImage e = ErrorImage::zeros(1, 1);
  e.delta.at(0, 0) = 0.5;
  e.mask.at(0, 0) = 1;
  const auto out = correct(constant_image(1, 1, 1.0), full_mask(1, 1), e);
  EXPECT_DOUBLE_EQ(out.inverse_depth.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(out.depth.at(0, 0), 2.0);
}

TEST(Correct, ScaleDividesTheError) {
  ErrorImage e = ErrorImage::zeros(1, 1, 4.0);
  e.delta.at(0, 0) = 2.0;
  e.mask.at(0, 0) = 1;
  const auto out = correct(constant_image(1, 1, 1.0), full_mask(1, 1), e);
  EXPECT_DOUBLE_EQ(out.inverse_depth.at(0, 0), 0.5);
}

TEST(Correct, NonPositiveResultsAreDropped) {
  ErrorImage e = ErrorImage::zeros(3, 1);
  e.mask = full_mask(3, 1);
  e.delta.at(0, 0) = 1.0;
  e.delta.at(1, 0) = 2.0;
  e.delta.at(2, 0) = 1.0 - 1e-5;
  const auto out = correct(constant_image(3, 1, 1.0), full_mask(3, 1), e);
  EXPECT_EQ(out.mask.at(0, 0), 0);
  EXPECT_EQ(out.mask.at(1, 0), 0);
  EXPECT_EQ(out.depth.at(1, 0), 0.0);
  EXPECT_EQ(out.mask.at(2, 0), 1);
}

TEST(Correct, InvalidPixelsStayInvalid) {
  ErrorImage e = ErrorImage::zeros(2, 1);
  e.mask.at(0, 0) = 1;
  Mask valid = full_mask(2, 1);
  valid.at(0, 0) = 0;
  e.mask.at(1, 0) = 1;
  const auto out = correct(constant_image(2, 1, 0.5), valid, e);
  EXPECT_EQ(out.mask.at(0, 0), 0);
  EXPECT_EQ(out.mask.at(1, 0), 1);
  EXPECT_THROW(correct(constant_image(3, 1, 0.5), full_mask(3, 1), e), ShapeError);
}

TEST(Correct, GroundTruthPredictionRecoversLaserDepth) {
  const auto frames = testing::render_scene(depth_bias_task(11));
  const SyntheticScene scene = generate(depth_bias_task(11));
  std::size_t checked = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto laser = rasterize(scene.laser, scene.trajectory.poses[f], testing::kTaskIntrinsics);
    const auto out = correct(frames[f].features, frames[f].target);
    for (std::size_t i = 0; i < out.mask.data.size(); ++i) {
      if (frames[f].target.mask.data[i] == 0) continue;
      ASSERT_EQ(out.mask.data[i], 1);
      EXPECT_NEAR(out.depth.data[i], 1.0 / laser.inverse_depth.data[i], 1e-6 / laser.inverse_depth.data[i]);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

class EvaluationTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { frames_ = new std::vector<Sample>(testing::depth_bias_frames(300, 1)); }
  static void TearDownTestSuite() {
    delete frames_;
    frames_ = nullptr;
  }
  static std::vector<Sample>* frames_;
};

std::vector<Sample>* EvaluationTest::frames_ = nullptr;

TEST_F(EvaluationTest, ZeroModelLeavesMetricsUnchanged) {
  const auto model = Model<float>::build(FeatureSelection::all(), 1);
  const auto result = evaluate(model, *frames_);
  EXPECT_EQ(result.corrected.rmse, result.baseline.rmse);
  EXPECT_EQ(result.corrected.delta, result.baseline.delta);
  EXPECT_EQ(result.corrected.n, result.baseline.n);
  EXPECT_GT(result.baseline.rmse, 0.0);
  EXPECT_EQ(result.baseline.label, "baseline");
  EXPECT_EQ(result.corrected.label, "cnn");
}

TEST_F(EvaluationTest, PerfectPredictionsGiveZeroError) {
  std::vector<ErrorImage> preds;
  for (const auto& s : *frames_) preds.push_back(center_crop(s, 64, 96).target);
  const auto result = evaluate_predictions(*frames_, preds);
  EXPECT_LT(result.corrected.rmse, 1e-12);
  EXPECT_EQ(result.corrected.delta, (std::array<double, 3>{1.0, 1.0, 1.0}));
  EXPECT_LT(result.baseline.delta[0], 1.0);
}

TEST_F(EvaluationTest, BaselineMatchesDirectMetrics) {
  MetricsAccumulator acc;
  for (const auto& full : *frames_) {
    const Sample s = center_crop(full, 64, 96);
    FloatImage laser(96, 64);
    for (std::size_t i = 0; i < laser.data.size(); ++i) {
      if (s.target.mask.data[i] != 0) laser.data[i] = s.features.inverse_depth.data[i] - s.target.delta.data[i];
    }
    acc.add(s.features.inverse_depth, laser, s.target.mask);
  }
  const auto direct = acc.report("baseline");
  std::vector<ErrorImage> zeros(frames_->size(), ErrorImage::zeros(96, 64));
  const auto result = evaluate_predictions(*frames_, zeros);
  EXPECT_NEAR(result.baseline.rmse, direct.rmse, 1e-15);
  EXPECT_EQ(result.baseline.delta, direct.delta);
  EXPECT_EQ(result.baseline.n, direct.n);
}

TEST_F(EvaluationTest, OverCorrectionIsFlooredNotDropped) {
  std::vector<ErrorImage> preds;
  for (const auto& s : *frames_) {
    ErrorImage e = center_crop(s, 64, 96).target;
    for (auto& v : e.delta.data) v = 100.0;
    e.mask = center_crop(s, 64, 96).features.mask;
    preds.push_back(e);
  }
  const auto result = evaluate_predictions(*frames_, preds);
  EXPECT_EQ(result.corrected.n, result.baseline.n);
  EXPECT_EQ(result.corrected.delta[2], 0.0);
}

TEST_F(EvaluationTest, RejectsMismatchedInputs) {
  std::vector<ErrorImage> preds(1, ErrorImage::zeros(96, 64));
  EXPECT_THROW(evaluate_predictions(*frames_, preds), std::invalid_argument);
  EXPECT_THROW(evaluate_predictions({}, {}), std::invalid_argument);
}

TEST_F(EvaluationTest, PredictionsAreBatchIndependent) {
  const auto model = testing::randomized_head_model(FeatureSelection::all(), 3);
  EvalOptions one;
  one.batch_size = 1;
  EvalOptions many;
  many.batch_size = 4;
  const std::span<const Sample> first(frames_->data(), 4);
  const auto a = predict_errors(model, first, one);
  const auto b = predict_errors(model, first, many);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    for (std::size_t j = 0; j < a[i].delta.data.size(); ++j) {
      ASSERT_NEAR(a[i].delta.data[j], b[i].delta.data[j], 1e-6);
    }
  }
}

TEST_F(EvaluationTest, AblationRowsOfAZeroModelEqualTheBaseline) {
  const auto model = Model<float>::build(FeatureSelection::all(), 4);
  const std::span<const Sample> few(frames_->data(), 3);
  const auto rows = ablation_study(model, few);
  const std::vector<std::string> labels = {"all",     "no_rgb",        "no_inverse_depth", "no_area",
                                           "no_normal", "no_edge_ratio", "no_view_angle",    "reduced"};
  ASSERT_EQ(rows.size(), labels.size());
  const auto base = evaluate(model, few).baseline;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].label, labels[i]);
    EXPECT_EQ(rows[i].rmse, base.rmse);
    EXPECT_EQ(rows[i].n, base.n);
  }
}

TEST_F(EvaluationTest, AblationFullRowMatchesEvaluate) {
  const auto model = testing::randomized_head_model(FeatureSelection::parse("rgb,inverse_depth,area"), 5);
  const std::span<const Sample> few(frames_->data(), 3);
  const auto rows = ablation_study(model, few);
  ASSERT_EQ(rows.size(), 4u);  // all, no_rgb, no_inverse_depth, no_area; no reduced row (normal missing)
  const auto full = evaluate(model, few).corrected;
  EXPECT_EQ(rows[0].rmse, full.rmse);
  EXPECT_EQ(rows[0].delta, full.delta);
  EXPECT_NE(rows[1].rmse, full.rmse);
}

TEST_F(EvaluationTest, DisablingADeadInputChangesNothing) {
  auto model = testing::randomized_head_model(FeatureSelection::all(), 6);
  auto& stem = model.parameter("conv1.weight").value;
  const int offset = *model.selection().channel_offset(Feature::area);
  for (int ky = 0; ky < stem.shape().n; ++ky) {
    for (int kx = 0; kx < stem.shape().h; ++kx) {
      for (int co = 0; co < stem.shape().c; ++co) stem.at(ky, kx, offset, co) = 0.0f;
    }
  }
  const std::span<const Sample> few(frames_->data(), 2);
  const auto rows = ablation_study(model, few);
  EXPECT_EQ(rows[3].label, "no_area");
  EXPECT_EQ(rows[3].rmse, rows[0].rmse);
  EXPECT_EQ(rows[3].delta, rows[0].delta);
}

TEST_F(EvaluationTest, FaithfulAblationNeedsTrainingData) {
  const auto model = Model<float>::build(FeatureSelection::parse("rgb,inverse_depth"), 7);
  AblationOptions opts;
  opts.mode = AblationMode::faithful;
  EXPECT_THROW(ablation_study(model, std::span<const Sample>(frames_->data(), 1), opts), std::invalid_argument);
}

TEST(Overlay, SignedColours) {
  ErrorImage e = ErrorImage::zeros(4, 1);
  e.delta.at(0, 0) = 0.5;
  e.delta.at(1, 0) = -0.25;
  e.delta.at(2, 0) = 0.0;
  e.mask.at(0, 0) = e.mask.at(1, 0) = e.mask.at(2, 0) = 1;
  const auto img = error_overlay(e);
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_EQ(img.at(0, 0, 2), 0.0);
  EXPECT_EQ(img.at(1, 0, 0), 0.0);
  EXPECT_EQ(img.at(1, 0, 2), 0.5);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(img.at(2, 0, c), 0.0);
    EXPECT_EQ(img.at(3, 0, c), 0.25);
  }
  const auto clipped = error_overlay(e, 0.1);
  EXPECT_EQ(clipped.at(0, 0, 0), 1.0);
  EXPECT_EQ(clipped.at(1, 0, 2), 1.0);
}

}  // namespace
}  // namespace meshcorr
