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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "meshcorr/autodiff/graph.hpp"

namespace meshcorr::autodiff {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Decoupled decay: params *= (1 - weight_decay) before each update.
  double weight_decay = 0.0;
};

/// First/second moment buffers, one pair per parameter, plus the step count.
template <std::floating_point T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;
};

/// One ADAM update with bias correction. All gradients are checked before
/// anything is written, so a NaN/Inf leaves parameters and state untouched.
template <std::floating_point T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
  for (const auto& p : params) {
    if (p.grad.empty()) continue;
    if (!(p.grad.shape() == p.value.shape())) throw ShapeError("adam_step: gradient shape mismatch for " + p.name);
    for (T v : p.grad.values()) {
      if (!std::isfinite(v)) throw NumericalError("adam_step: non-finite gradient in " + p.name);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T alpha = static_cast<T>(cfg.learning_rate * std::sqrt(1.0 - std::pow(cfg.beta2, t)) /
                                 (1.0 - std::pow(cfg.beta1, t)));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eps_hat = static_cast<T>(cfg.epsilon * std::sqrt(1.0 - std::pow(cfg.beta2, t)));
  const T keep = static_cast<T>(1.0 - cfg.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    T* w = p.value.data();
    T* m = state.first_moment[i].data();
    T* v = state.second_moment[i].data();
    const T* g = p.grad.empty() ? nullptr : p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T gj = g != nullptr ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      w[j] = keep * w[j] - alpha * m[j] / (std::sqrt(v[j]) + eps_hat);
    }
  }
}

}  // namespace meshcorr::autodiff
