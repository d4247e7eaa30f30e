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

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meshcorr/autodiff/graph.hpp"
#include "meshcorr/autodiff/ops.hpp"
#include "meshcorr/errors.hpp"
#include "meshcorr/random.hpp"

namespace meshcorr {

/// The six rasterised mesh features, in network channel order.
enum class Feature { rgb, inverse_depth, area, normal, edge_ratio, view_angle };

inline constexpr std::array<Feature, 6> kAllFeatures = {Feature::rgb,    Feature::inverse_depth, Feature::area,
                                                        Feature::normal, Feature::edge_ratio,    Feature::view_angle};

constexpr std::string_view feature_name(Feature f) {
  switch (f) {
    case Feature::rgb: return "rgb";
    case Feature::inverse_depth: return "inverse_depth";
    case Feature::area: return "area";
    case Feature::normal: return "normal";
    case Feature::edge_ratio: return "edge_ratio";
    case Feature::view_angle: return "view_angle";
  }
  return "";
}

/// Number of image channels a feature occupies.
constexpr int feature_width(Feature f) { return (f == Feature::rgb || f == Feature::normal) ? 3 : 1; }

inline Feature parse_feature(std::string_view name) {
  for (Feature f : kAllFeatures) {
    if (feature_name(f) == name) return f;
  }
  throw FormatError("unknown feature '" + std::string(name) + "'");
}

/// Which features feed the network.
struct FeatureSelection {
  std::array<bool, 6> enabled{true, true, true, true, true, true};

  static FeatureSelection all() { return {}; }

  static FeatureSelection none() {
    FeatureSelection s;
    s.enabled.fill(false);
    return s;
  }

  /// Comma-separated feature names, or "all".
  static FeatureSelection parse(std::string_view text) {
    if (text == "all") return all();
    FeatureSelection s = none();
    std::string item;
    std::istringstream in{std::string(text)};
    while (std::getline(in, item, ',')) {
      if (!item.empty()) s.set(parse_feature(item), true);
    }
    if (!s.any()) throw FormatError("feature selection is empty");
    return s;
  }

  bool has(Feature f) const { return enabled[static_cast<std::size_t>(f)]; }
  void set(Feature f, bool on) { enabled[static_cast<std::size_t>(f)] = on; }
  FeatureSelection without(Feature f) const {
    FeatureSelection s = *this;
    s.set(f, false);
    return s;
  }

  bool any() const {
    for (bool b : enabled) {
      if (b) return true;
    }
    return false;
  }

  /// F, the network's input channel count (10 with every feature on).
  int channel_count() const {
    int count = 0;
    for (Feature f : kAllFeatures) {
      if (has(f)) count += feature_width(f);
    }
    return count;
  }

  /// True if every feature enabled here is also enabled in `other`.
  bool subset_of(const FeatureSelection& other) const {
    for (Feature f : kAllFeatures) {
      if (has(f) && !other.has(f)) return false;
    }
    return true;
  }

  /// Channel index of `f`'s first channel within this selection's layout.
  std::optional<int> channel_offset(Feature f) const {
    int offset = 0;
    for (Feature g : kAllFeatures) {
      if (g == f) return has(f) ? std::optional<int>(offset) : std::nullopt;
      if (has(g)) offset += feature_width(g);
    }
    return std::nullopt;
  }

  std::string str() const {
    std::string out;
    for (Feature f : kAllFeatures) {
      if (!has(f)) continue;
      if (!out.empty()) out += ',';
      out += feature_name(f);
    }
    return out;
  }

  bool operator==(const FeatureSelection&) const = default;
};

/// Per-channel affine standardisation applied to covered pixels before they
/// enter the network (uncovered pixels stay 0). Identity until fitted.
struct InputNormalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static InputNormalizer identity(int channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

/// Static description of one network stage, reported by Model::forward.
struct BlockTrace {
  std::string name;
  autodiff::Shape output;
  double rms = 0.0;  // root-mean-square activation
};

/// Expected per-row output extent of the error-prediction network for a
/// 64x96 input, one entry per table row after the input.
struct TableRow {
  std::string_view block;
  int height;
  int width;
  int channels;
};

inline constexpr std::array<TableRow, 13> kArchitectureTable = {{
    {"conv1", 32, 48, 64},
    {"pool1", 16, 24, 64},
    {"group1", 16, 24, 256},
    {"group2", 8, 12, 512},
    {"group3", 4, 6, 1024},
    {"group4", 2, 3, 2048},
    {"up1", 4, 6, 1024},
    {"up2", 8, 12, 512},
    {"up3", 16, 24, 256},
    {"up4", 32, 48, 128},
    {"up5", 64, 96, 32},
    {"head", 64, 96, 1},
    {"output", 64, 96, 1},
}};

/// Fully convolutional residual network that maps F feature channels to one
/// channel of predicted inverse-depth error.
///
/// Encoder: 7x7/2 conv, 3x3/2 max pool, then four groups of
/// [residual, residual, projection] ending at 2x3x2048. Residual and
/// projection blocks are 1x1 -> 3x3 -> 1x1 bottlenecks whose two inner
/// activations are CReLU, so each inner conv has half the filters of the
/// activation it produces. Decoder: five up-projections
/// (unpool, 3x3 conv + 1x1 shortcut conv, ReLU) and a 3x3 conv head.
///
/// Two places differ from a literal reading of the stride column of the
/// architecture table, because the table's output sizes are authoritative:
/// the first group keeps stride 1 (16x24 in and out), and the fourth group
/// gets a stride-2 projection to reach 2x3.
template <std::floating_point T>
class Model {
 public:
  static Model build(const FeatureSelection& selection, std::uint64_t seed) {
    if (!selection.any()) throw std::invalid_argument("feature selection must enable at least one feature");
    Model m;
    m.selection_ = selection;
    m.normalizer_ = InputNormalizer::identity(selection.channel_count());
    Rng rng(seed);
    const int f = selection.channel_count();

    m.add_block("conv1", BlockKind::stem, {m.add_conv(rng, "conv1", 7, 2, f, 64, kReluGain)});
    m.add_block("pool1", BlockKind::pool, {});
    int channels = 64;
    const std::array<int, 4> group_out = {256, 512, 1024, 2048};
    const std::array<int, 4> group_stride = {1, 2, 2, 2};
    for (int gi = 0; gi < 4; ++gi) {
      const std::string group = "group" + std::to_string(gi + 1);
      const int inner = group_out[gi] / 8;
      for (int r = 1; r <= 2; ++r) {
        const std::string name = group + ".residual" + std::to_string(r);
        m.add_block(name, BlockKind::residual,
                    {m.add_conv(rng, name + ".reduce", 1, 1, channels, inner, kReluGain),
                     m.add_conv(rng, name + ".spatial", 3, 1, 2 * inner, inner, kCreluGain),
                     m.add_conv(rng, name + ".expand", 1, 1, 2 * inner, channels, 0.0)});
      }
      const std::string name = group + ".projection";
      m.add_block(name, BlockKind::projection,
                  {m.add_conv(rng, name + ".reduce", 1, 1, channels, inner, kReluGain),
                   m.add_conv(rng, name + ".spatial", 3, group_stride[gi], 2 * inner, inner, kCreluGain),
                   m.add_conv(rng, name + ".expand", 1, 1, 2 * inner, group_out[gi], kCreluGain / 2.0),
                   m.add_conv(rng, name + ".shortcut", 1, group_stride[gi], channels, group_out[gi], kReluGain / 2.0)});
      channels = group_out[gi];
    }
    const std::array<int, 5> up_out = {1024, 512, 256, 128, 32};
    for (int u = 0; u < 5; ++u) {
      const std::string name = "up" + std::to_string(u + 1);
      m.add_block(name, BlockKind::up_projection,
                  {m.add_conv(rng, name + ".main", 3, 1, channels, up_out[u], kReluGain / 2.0),
                   m.add_conv(rng, name + ".shortcut", 1, 1, channels, up_out[u], kReluGain / 2.0)});
      channels = up_out[u];
    }
    m.add_block("head", BlockKind::head, {m.add_conv(rng, "head", 3, 1, channels, 1, 0.0)});
    return m;
  }

  const FeatureSelection& selection() const { return selection_; }
  int input_channels() const { return selection_.channel_count(); }

  InputNormalizer& normalizer() { return normalizer_; }
  const InputNormalizer& normalizer() const { return normalizer_; }

  std::span<autodiff::Parameter<T>> parameters() { return params_; }
  std::span<const autodiff::Parameter<T>> parameters() const { return params_; }

  autodiff::Parameter<T>& parameter(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  const autodiff::Parameter<T>& parameter(std::string_view name) const {
    return const_cast<Model*>(this)->parameter(name);
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
  }

  std::vector<std::string> block_names() const {
    std::vector<std::string> names;
    for (const auto& b : blocks_) names.push_back(b.name);
    return names;
  }

  /// Trainable forward pass: parameters enter the graph as gradient sinks.
  autodiff::Var forward(autodiff::Graph<T>& g, autodiff::Var input, std::vector<BlockTrace>* trace = nullptr) {
    std::vector<autodiff::Var> vars;
    vars.reserve(params_.size());
    for (auto& p : params_) vars.push_back(g.parameter(p));
    return run(g, input, vars, trace);
  }

  /// Inference on an NHWC batch whose channel count is F.
  autodiff::Tensor<T> predict(const autodiff::Tensor<T>& batch, std::vector<BlockTrace>* trace = nullptr) const {
    autodiff::Graph<T> g(false);
    std::vector<autodiff::Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(g.constant(p.value));
    const autodiff::Var x = g.constant(batch);
    return g.value(run(g, x, vars, trace));
  }

  /// Same architecture and normaliser over a subset of the features: the
  /// first conv keeps only the input slices of retained channels, every
  /// other parameter is copied.
  Model restrict_to(const FeatureSelection& reduced) const {
    if (!reduced.any() || !reduced.subset_of(selection_)) {
      throw std::invalid_argument("feature selection '" + reduced.str() + "' is not a subset of '" +
                                  selection_.str() + "'");
    }
    Model m = *this;
    m.selection_ = reduced;
    std::vector<int> keep;
    for (Feature f : kAllFeatures) {
      if (!reduced.has(f)) continue;
      const int offset = *selection_.channel_offset(f);
      for (int c = 0; c < feature_width(f); ++c) keep.push_back(offset + c);
    }
    const Conv& stem = convs_.front();
    const auto& old_w = params_[stem.weight].value;
    autodiff::Tensor<T> w(autodiff::Shape{stem.kernel, stem.kernel, static_cast<int>(keep.size()), stem.out});
    for (int ky = 0; ky < stem.kernel; ++ky) {
      for (int kx = 0; kx < stem.kernel; ++kx) {
        for (std::size_t ci = 0; ci < keep.size(); ++ci) {
          for (int co = 0; co < stem.out; ++co) {
            w.at(ky, kx, static_cast<int>(ci), co) = old_w.at(ky, kx, keep[ci], co);
          }
        }
      }
    }
    m.params_[stem.weight].value = std::move(w);
    m.params_[stem.weight].grad = autodiff::Tensor<T>();
    m.convs_.front().in = static_cast<int>(keep.size());
    InputNormalizer norm;
    for (int c : keep) {
      norm.mean.push_back(normalizer_.mean.at(c));
      norm.scale.push_back(normalizer_.scale.at(c));
    }
    m.normalizer_ = std::move(norm);
    return m;
  }

  /// Receptive field (input pixels) of one output pixel along one axis,
  /// from kernel sizes and strides alone. Up-sampling halves the jump.
  double receptive_field() const {
    double field = 1.0;
    double jump = 1.0;
    auto conv = [&](int kernel, int stride) {
      field += (kernel - 1) * jump;
      jump *= stride;
    };
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case BlockKind::stem:
        case BlockKind::head: conv(convs_[b.convs[0]].kernel, convs_[b.convs[0]].stride); break;
        case BlockKind::pool: conv(3, 2); break;
        case BlockKind::residual:
        case BlockKind::projection: conv(3, convs_[b.convs[1]].stride); break;
        case BlockKind::up_projection:
          jump /= 2.0;
          conv(3, 1);
          break;
      }
    }
    return field;
  }

 private:
  enum class BlockKind { stem, pool, residual, projection, up_projection, head };

  struct Conv {
    std::size_t weight = 0;
    std::size_t bias = 0;
    int kernel = 1;
    int stride = 1;
    int in = 0;
    int out = 0;
  };

  struct Block {
    std::string name;
    BlockKind kind;
    std::vector<std::size_t> convs;
  };

  // Weight variance is gain / fan_in. A ReLU input keeps half its energy
  // (He), a CReLU input keeps all of it; two summed branches split the gain.
  static constexpr double kReluGain = 2.0;
  static constexpr double kCreluGain = 1.0;

  std::size_t add_conv(Rng& rng, const std::string& name, int kernel, int stride, int in, int out, double gain) {
    Conv c;
    c.kernel = kernel;
    c.stride = stride;
    c.in = in;
    c.out = out;
    autodiff::Tensor<T> w(autodiff::Shape{kernel, kernel, in, out});
    if (gain > 0.0) {
      const double stddev = std::sqrt(gain / (static_cast<double>(kernel) * kernel * in));
      for (auto& v : w.values()) v = static_cast<T>(stddev * rng.normal());
    }
    c.weight = params_.size();
    params_.push_back({name + ".weight", std::move(w), {}});
    c.bias = params_.size();
    params_.push_back({name + ".bias", autodiff::Tensor<T>(autodiff::Shape{1, 1, 1, out}), {}});
    convs_.push_back(c);
    return convs_.size() - 1;
  }

  void add_block(std::string name, BlockKind kind, std::vector<std::size_t> convs) {
    blocks_.push_back({std::move(name), kind, std::move(convs)});
  }

  autodiff::Var apply_conv(autodiff::Graph<T>& g, autodiff::Var x, std::size_t index,
                           const std::vector<autodiff::Var>& vars) const {
    const Conv& c = convs_[index];
    return autodiff::conv2d(g, x, vars[c.weight], &vars[c.bias], c.stride, autodiff::Padding::same);
  }

  autodiff::Var run(autodiff::Graph<T>& g, autodiff::Var x, const std::vector<autodiff::Var>& vars,
                    std::vector<BlockTrace>* trace) const {
    using namespace autodiff;
    if (g.value(x).shape().c != input_channels()) {
      throw ShapeError("model expects " + std::to_string(input_channels()) + " input channels (" + selection_.str() +
                       "), batch has " + std::to_string(g.value(x).shape().c));
    }
    for (const auto& b : blocks_) {
      switch (b.kind) {
        case BlockKind::stem: x = relu(g, apply_conv(g, x, b.convs[0], vars)); break;
        case BlockKind::pool: x = max_pool(g, x, 3, 2); break;
        case BlockKind::residual:
        case BlockKind::projection: {
          Var h = crelu(g, apply_conv(g, x, b.convs[0], vars));
          h = crelu(g, apply_conv(g, h, b.convs[1], vars));
          h = apply_conv(g, h, b.convs[2], vars);
          const Var shortcut = b.kind == BlockKind::projection ? apply_conv(g, x, b.convs[3], vars) : x;
          x = relu(g, add(g, h, shortcut));
          break;
        }
        case BlockKind::up_projection: {
          const Var up = unpool_nn(g, x);
          x = relu(g, add(g, apply_conv(g, up, b.convs[0], vars), apply_conv(g, up, b.convs[1], vars)));
          break;
        }
        case BlockKind::head: x = apply_conv(g, x, b.convs[0], vars); break;
      }
      if (trace != nullptr) {
        double sum = 0.0;
        for (T v : g.value(x).values()) sum += static_cast<double>(v) * v;
        const auto n = static_cast<double>(std::max<std::size_t>(g.value(x).size(), 1));
        trace->push_back({b.name, g.value(x).shape(), std::sqrt(sum / n)});
      }
    }
    return x;
  }

  FeatureSelection selection_;
  InputNormalizer normalizer_;
  std::vector<autodiff::Parameter<T>> params_;
  std::vector<Conv> convs_;
  std::vector<Block> blocks_;
};

}  // namespace meshcorr
