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
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshcorr/autodiff/adam.hpp"
#include "meshcorr/checkpoint.hpp"
#include "meshcorr/groundtruth.hpp"
#include "meshcorr/loss_metrics.hpp"
#include "meshcorr/network.hpp"
#include "meshcorr/rasterizer.hpp"

namespace meshcorr {

/// Camera-mesh features and their ground-truth error for one frame.
struct Sample {
  FeatureImageSet features;
  ErrorImage target;
  int frame = 0;
  std::string group;  // scene family, for leave-one-out splits

  void validate() const {
    if (features.width != target.width() || features.height != target.height()) {
      throw ShapeError("sample " + std::to_string(frame) + ": feature and target sizes differ");
    }
    for (std::size_t i = 0; i < target.mask.data.size(); ++i) {
      if (target.mask.data[i] != 0 && features.mask.data[i] == 0) {
        throw ShapeError("sample " + std::to_string(frame) + ": target mask exceeds feature coverage");
      }
    }
  }

  Sample crop(int x0, int y0, int w, int h) const {
    return {features.crop(x0, y0, w, h), target.crop(x0, y0, w, h), frame, group};
  }
};

struct TrainPhase {
  double learning_rate = 1e-4;
  int epochs = 0;
};

struct TrainConfig {
  int batch_size = 16;
  TrainPhase phase1{1e-4, 250};
  TrainPhase phase2{1e-5, 50};
  double weight_decay = 1e-6;  // per step, decoupled
  int crop_height = 64;
  int crop_width = 96;
  std::uint64_t seed = 0;
  /// When non-empty, phase1.ckpt / phase2.ckpt are written here at the end
  /// of each phase, and last_good.ckpt if a non-finite value aborts training.
  std::filesystem::path checkpoint_dir;

  void validate() const {
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (!(phase1.learning_rate > 0.0) || !(phase2.learning_rate > 0.0)) {
      throw std::invalid_argument("learning rates must be positive");
    }
    if (phase1.epochs < 0 || phase2.epochs < 0) throw std::invalid_argument("epoch counts must be non-negative");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) throw std::invalid_argument("weight_decay must lie in [0, 1)");
    if (crop_height <= 0 || crop_width <= 0 || crop_height % 32 != 0 || crop_width % 32 != 0) {
      throw std::invalid_argument("crop size must be a positive multiple of 32 in both axes");
    }
  }
};

struct EpochLog {
  int epoch = 0;  // global, 0-based
  int phase = 1;
  double mean_loss = 0.0;
  double learning_rate = 0.0;

  bool operator==(const EpochLog&) const = default;
};

inline void write_loss_log(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,phase,mean_loss,lr\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : log) out << e.epoch << ',' << e.phase << ',' << e.mean_loss << ',' << e.learning_rate << '\n';
}

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  std::vector<double> step_learning_rates;
};

/// Random crop with one offset shared by features and target.
inline Sample augment_crop(const Sample& sample, int crop_height, int crop_width, Rng& rng) {
  const int slack_y = sample.features.height - crop_height;
  const int slack_x = sample.features.width - crop_width;
  if (slack_y < 0 || slack_x < 0) throw ShapeError("augment_crop: render smaller than the crop");
  const int dy = static_cast<int>(rng.index(static_cast<std::uint64_t>(slack_y) + 1));
  const int dx = static_cast<int>(rng.index(static_cast<std::uint64_t>(slack_x) + 1));
  return sample.crop(dx, dy, crop_width, crop_height);
}

/// Centred crop, used for evaluation.
inline Sample center_crop(const Sample& sample, int crop_height, int crop_width) {
  const int slack_y = sample.features.height - crop_height;
  const int slack_x = sample.features.width - crop_width;
  if (slack_y < 0 || slack_x < 0) throw ShapeError("center_crop: render smaller than the crop");
  return sample.crop(slack_x / 2, slack_y / 2, crop_width, crop_height);
}

/// Per-channel mean and standard deviation over covered pixels.
inline InputNormalizer fit_normalizer(std::span<const Sample> data, const FeatureSelection& selection) {
  const int channels = selection.channel_count();
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t n = 0;
  for (const auto& s : data) {
    const auto& f = s.features;
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        if (f.mask.at(x, y) == 0) continue;
        ++n;
        int ch = 0;
        for (Feature feat : kAllFeatures) {
          if (!selection.has(feat)) continue;
          const FloatImage& img = f.channel(feat);
          for (int k = 0; k < img.channels; ++k, ++ch) {
            const double v = img.at(x, y, k);
            sum[ch] += v;
            sq[ch] += v * v;
          }
        }
      }
    }
  }
  InputNormalizer norm = InputNormalizer::identity(channels);
  if (n == 0) return norm;
  for (int c = 0; c < channels; ++c) {
    const double mean = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n) - mean * mean);
    norm.mean[c] = mean;
    norm.scale[c] = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  }
  return norm;
}

/// NHWC network input for equally sized feature sets. Covered pixels are
/// standardised; uncovered pixels and every channel of a feature listed in
/// `disabled` are 0 (the training mean after standardisation).
template <std::floating_point T>
autodiff::Tensor<T> make_input(std::span<const FeatureImageSet* const> frames, const FeatureSelection& selection,
                               const InputNormalizer& norm, const FeatureSelection& disabled = FeatureSelection::none()) {
  if (frames.empty()) throw std::invalid_argument("make_input: empty batch");
  const int w = frames.front()->width;
  const int h = frames.front()->height;
  const int channels = selection.channel_count();
  if (norm.mean.size() != static_cast<std::size_t>(channels)) throw ShapeError("make_input: normaliser width");
  autodiff::Tensor<T> out(autodiff::Shape{static_cast<int>(frames.size()), h, w, channels});
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const FeatureImageSet& f = *frames[n];
    if (f.width != w || f.height != h) throw ShapeError("make_input: frames differ in size");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (f.mask.at(x, y) == 0) continue;
        T* dst = &out.at(static_cast<int>(n), y, x, 0);
        int ch = 0;
        for (Feature feat : kAllFeatures) {
          if (!selection.has(feat)) continue;
          const FloatImage& img = f.channel(feat);
          for (int k = 0; k < img.channels; ++k, ++ch) {
            dst[ch] = disabled.has(feat) ? T(0) : static_cast<T>((img.at(x, y, k) - norm.mean[ch]) / norm.scale[ch]);
          }
        }
      }
    }
  }
  return out;
}

namespace detail {

inline void write_phase_checkpoint(const TrainConfig& cfg, const Model<float>& model, int phase) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  save_checkpoint(cfg.checkpoint_dir / ("phase" + std::to_string(phase) + ".ckpt"), model,
                  {{"phase", phase}, {"seed", cfg.seed}});
}

/// The parameters before the failing step, kept when training aborts.
inline void write_last_good_checkpoint(const TrainConfig& cfg, const Model<float>& model, int epoch) {
  if (cfg.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  save_checkpoint(cfg.checkpoint_dir / "last_good.ckpt", model, {{"epoch", epoch}, {"seed", cfg.seed}});
}

/// Runs `phases` over `data` in order, logging one row per epoch.
inline void run_phases(Model<float>& model, std::span<const Sample> data, const TrainConfig& cfg,
                       std::span<const std::pair<int, TrainPhase>> phases, TrainResult& result,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  using namespace autodiff;
  Rng rng(cfg.seed ^ 0x5deece66dULL);
  AdamState<float> state;
  std::vector<std::size_t> order(data.size());
  int epoch = 0;
  for (const auto& [phase_id, phase] : phases) {
    AdamConfig adam;
    adam.learning_rate = phase.learning_rate;
    adam.weight_decay = cfg.weight_decay;
    for (int e = 0; e < phase.epochs; ++e, ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      double loss_sum = 0.0;
      int batches = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Sample> crops;
        crops.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
          crops.push_back(augment_crop(data[order[i]], cfg.crop_height, cfg.crop_width, rng));
        }
        std::vector<const FeatureImageSet*> frames;
        Tensor<float> target(Shape{static_cast<int>(crops.size()), cfg.crop_height, cfg.crop_width, 1});
        std::vector<std::uint8_t> mask(target.size());
        for (std::size_t n = 0; n < crops.size(); ++n) {
          frames.push_back(&crops[n].features);
          const std::size_t base = n * static_cast<std::size_t>(cfg.crop_height) * cfg.crop_width;
          for (std::size_t i = 0; i < crops[n].target.mask.data.size(); ++i) {
            mask[base + i] = crops[n].target.mask.data[i];
            target[base + i] = mask[base + i] != 0 ? static_cast<float>(crops[n].target.delta.data[i]) : 0.0f;
          }
        }
        if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) continue;

        for (auto& p : model.parameters()) p.zero_grad();
        Graph<float> g;
        const Var x = g.input(make_input<float>(frames, model.selection(), model.normalizer()));
        const Var loss = berhu_loss(g, model.forward(g, x), target, mask);
        const double value = g.value(loss)[0];
        try {
          if (!std::isfinite(value)) {
            throw NumericalError("training loss became non-finite in epoch " + std::to_string(epoch));
          }
          g.backward(loss);
          adam_step<float>(model.parameters(), state, adam);
        } catch (const NumericalError&) {
          write_last_good_checkpoint(cfg, model, epoch);
          throw;
        }
        loss_sum += value;
        ++batches;
        result.step_learning_rates.push_back(phase.learning_rate);
      }
      EpochLog row{epoch, phase_id, batches > 0 ? loss_sum / batches : 0.0, phase.learning_rate};
      result.log.push_back(row);
      if (on_epoch) on_epoch(row);
    }
    write_phase_checkpoint(cfg, model, phase_id);
  }
}

inline void check_dataset(std::span<const Sample> data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& s : data) {
    s.validate();
    if (s.features.width != data.front().features.width || s.features.height != data.front().features.height) {
      throw ShapeError("training samples differ in render size");
    }
  }
  if (data.front().features.height < cfg.crop_height || data.front().features.width < cfg.crop_width) {
    throw ShapeError("render size is smaller than the crop size");
  }
}

}  // namespace detail

/// Two-phase ADAM training of a fresh model on BerHu loss over target-mask
/// pixels. Deterministic for a given seed.
inline TrainResult train(std::span<const Sample> data, const TrainConfig& cfg, const FeatureSelection& selection,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  detail::check_dataset(data, cfg);
  TrainResult result{Model<float>::build(selection, cfg.seed), {}, {}};
  result.model.normalizer() = fit_normalizer(data, selection);
  const std::array<std::pair<int, TrainPhase>, 2> phases = {{{1, cfg.phase1}, {2, cfg.phase2}}};
  detail::run_phases(result.model, data, cfg, phases, result, on_epoch);
  return result;
}

/// Drops the features missing from `reduced` (and their first-layer input
/// slices) and keeps training at the phase-2 learning rate.
inline TrainResult fine_tune(const Model<float>& model, std::span<const Sample> data, const TrainConfig& cfg,
                             const FeatureSelection& reduced, int epochs,
                             const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  TrainResult result{model.restrict_to(reduced), {}, {}};
  if (epochs <= 0) return result;
  detail::check_dataset(data, cfg);
  const std::array<std::pair<int, TrainPhase>, 1> phases = {{{2, TrainPhase{cfg.phase2.learning_rate, epochs}}}};
  detail::run_phases(result.model, data, cfg, phases, result, on_epoch);
  return result;
}

/// One held-out scene group and the samples of every other group.
struct Split {
  std::string held_out;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// One split per distinct group, in order of first appearance.
inline std::vector<Split> leave_one_out_splits(std::span<const Sample> data) {
  std::vector<std::string> groups;
  for (const Sample& s : data) {
    if (std::find(groups.begin(), groups.end(), s.group) == groups.end()) groups.push_back(s.group);
  }
  if (groups.size() < 2) throw std::invalid_argument("leave-one-out needs at least two scene groups");
  std::vector<Split> splits;
  for (const std::string& g : groups) {
    Split split{g, {}, {}};
    for (const Sample& s : data) (s.group == g ? split.test : split.train).push_back(s);
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace meshcorr
