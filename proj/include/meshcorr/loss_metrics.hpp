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
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "meshcorr/autodiff/graph.hpp"
#include "meshcorr/image.hpp"

namespace meshcorr {

// ---------------------------------------------------------------- BerHu

/// Floor of the BerHu breakpoint, so an all-zero residual batch stays finite.
inline constexpr double kBerhuMinThreshold = 1e-6;
inline constexpr double kBerhuThresholdFraction = 0.2;

/// Reverse Huber: |x| for |x| <= c, (x^2 + c^2) / (2c) beyond.
template <class T>
T berhu(T x, T c) {
  const T a = std::abs(x);
  return a <= c ? a : (x * x + c * c) / (T(2) * c);
}

/// d/dx of berhu(x, c); sign(0) = 0.
template <class T>
T berhu_derivative(T x, T c) {
  if (std::abs(x) <= c) return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
  return x / c;
}

/// Batch breakpoint c = 0.2 max|r| over masked residuals, floored at 1e-6.
template <class T>
T berhu_threshold(std::span<const T> residuals, std::span<const std::uint8_t> mask) {
  T peak = T(0);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (mask[i] != 0) peak = std::max(peak, std::abs(residuals[i]));
  }
  return std::max(static_cast<T>(kBerhuThresholdFraction) * peak, static_cast<T>(kBerhuMinThreshold));
}

/// Mean BerHu over masked residuals with the adaptive breakpoint.
template <class T>
T berhu_loss(std::span<const T> residuals, std::span<const std::uint8_t> mask) {
  if (residuals.size() != mask.size()) throw ShapeError("berhu_loss: residual/mask size mismatch");
  const T c = berhu_threshold(residuals, mask);
  T sum = T(0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (mask[i] == 0) continue;
    sum += berhu(residuals[i], c);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("berhu_loss: empty mask");
  return sum / static_cast<T>(n);
}

/// Graph op: mean BerHu of (prediction - target) over mask, as a scalar.
///
/// The breakpoint depends on the batch through max|r|, and the gradient
/// includes that path (it reaches the first arg-max residual), so the
/// result is the exact derivative of the value computed here.
template <std::floating_point T>
autodiff::Var berhu_loss(autodiff::Graph<T>& g, autodiff::Var prediction, const autodiff::Tensor<T>& target,
                         std::span<const std::uint8_t> mask) {
  using namespace autodiff;
  const Tensor<T>& pred = g.value(prediction);
  if (!(pred.shape() == target.shape()) || mask.size() != pred.size()) {
    throw ShapeError("berhu_loss: prediction " + pred.shape().str() + ", target " + target.shape().str() +
                     ", mask of " + std::to_string(mask.size()));
  }
  std::vector<T> r(pred.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = pred[i] - target[i];
  T peak = T(0);
  std::size_t peak_index = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (mask[i] == 0) continue;
    ++n;
    if (std::abs(r[i]) > peak) {
      peak = std::abs(r[i]);
      peak_index = i;
    }
  }
  if (n == 0) throw std::invalid_argument("berhu_loss: empty mask");
  const T raw_c = static_cast<T>(kBerhuThresholdFraction) * peak;
  const bool floored = raw_c < static_cast<T>(kBerhuMinThreshold);
  const T c = floored ? static_cast<T>(kBerhuMinThreshold) : raw_c;
  T sum = T(0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (mask[i] != 0) sum += berhu(r[i], c);
  }
  Tensor<T> out(Shape{}, sum / static_cast<T>(n));
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return g.record(std::move(out), {prediction},
                  [=, r = std::move(r), keep = std::move(keep)](const Tensor<T>& dy, Graph<T>& graph) {
                    T* dx = graph.grad_buffer(prediction).data();
                    const T scale = dy[0] / static_cast<T>(n);
                    T dc = T(0);
                    for (std::size_t i = 0; i < r.size(); ++i) {
                      if (keep[i] == 0) continue;
                      dx[i] += scale * berhu_derivative(r[i], c);
                      if (std::abs(r[i]) > c) dc += T(0.5) - r[i] * r[i] / (T(2) * c * c);
                    }
                    if (!floored) {
                      const T sign = r[peak_index] > T(0) ? T(1) : T(-1);
                      dx[peak_index] += scale * dc * static_cast<T>(kBerhuThresholdFraction) * sign;
                    }
                  });
}

// ---------------------------------------------------------------- metrics

inline constexpr double kDeltaThreshold = 1.25;

/// RMSE and thresholded accuracies over the valid-pixel set X.
struct MetricsReport {
  std::string label;
  double rmse = 0.0;
  std::array<double, 3> delta{};  // delta_1..3
  std::size_t n = 0;

  static constexpr const char* kCsvHeader = "config,rmse,d1,d2,d3,n";

  std::string csv_row() const {
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10) << label << ',' << rmse << ',' << delta[0]
        << ',' << delta[1] << ',' << delta[2] << ',' << n;
    return out.str();
  }

  bool operator==(const MetricsReport&) const = default;
};

inline void check_metric_inputs(const FloatImage& pred, const FloatImage& gt, const Mask& mask) {
  if (!pred.same_size(gt.width, gt.height) || !pred.same_size(mask.width, mask.height) || pred.channels != 1 ||
      gt.channels != 1) {
    throw ShapeError("metrics: prediction, ground truth and mask must be single-channel images of one size");
  }
}

/// sqrt(mean over X of (pred - gt)^2).
inline double rmse(const FloatImage& pred, const FloatImage& gt, const Mask& mask) {
  check_metric_inputs(pred, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] == 0) continue;
    const double d = pred.data[i] - gt.data[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(n));
}

/// Fraction of X with max(gt/pred, pred/gt) < thr^k for k = 1, 2, 3.
inline std::array<double, 3> delta_accuracy(const FloatImage& pred, const FloatImage& gt, const Mask& mask,
                                            double thr = kDeltaThreshold) {
  check_metric_inputs(pred, gt, mask);
  const std::array<double, 3> bounds = {thr, thr * thr, thr * thr * thr};
  std::array<std::size_t, 3> hits{};
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] == 0) continue;
    const double p = pred.data[i];
    const double q = gt.data[i];
    if (!(p > 0.0) || !(q > 0.0)) throw std::invalid_argument("delta_accuracy: non-positive value on the mask");
    const double ratio = std::max(q / p, p / q);
    for (int k = 0; k < 3; ++k) {
      if (ratio < bounds[k]) ++hits[k];
    }
    ++n;
  }
  if (n == 0) throw std::invalid_argument("delta_accuracy: empty mask");
  std::array<double, 3> out{};
  for (int k = 0; k < 3; ++k) out[k] = static_cast<double>(hits[k]) / static_cast<double>(n);
  return out;
}

/// Metrics pooled over several frames (every valid pixel weighs the same).
class MetricsAccumulator {
 public:
  void add(const FloatImage& pred, const FloatImage& gt, const Mask& mask, double thr = kDeltaThreshold) {
    check_metric_inputs(pred, gt, mask);
    const std::array<double, 3> bounds = {thr, thr * thr, thr * thr * thr};
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      if (mask.data[i] == 0) continue;
      const double p = pred.data[i];
      const double q = gt.data[i];
      if (!(p > 0.0) || !(q > 0.0)) throw std::invalid_argument("metrics: non-positive value on the mask");
      const double d = p - q;
      squared_ += d * d;
      const double ratio = std::max(q / p, p / q);
      for (int k = 0; k < 3; ++k) {
        if (ratio < bounds[k]) ++hits_[k];
      }
      ++n_;
    }
  }

  MetricsReport report(std::string label) const {
    if (n_ == 0) throw std::invalid_argument("metrics: no valid pixels");
    MetricsReport r;
    r.label = std::move(label);
    r.rmse = std::sqrt(squared_ / static_cast<double>(n_));
    for (int k = 0; k < 3; ++k) r.delta[k] = static_cast<double>(hits_[k]) / static_cast<double>(n_);
    r.n = n_;
    return r;
  }

 private:
  double squared_ = 0.0;
  std::array<std::size_t, 3> hits_{};
  std::size_t n_ = 0;
};

inline void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> reports) {
  out << MetricsReport::kCsvHeader << '\n';
  for (const auto& r : reports) out << r.csv_row() << '\n';
}

}  // namespace meshcorr
