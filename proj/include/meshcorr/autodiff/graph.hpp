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

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "meshcorr/autodiff/tensor.hpp"

namespace meshcorr::autodiff {

/// Trainable tensor with its accumulated gradient.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first backward pass touches it

  void zero_grad() {
    if (grad.empty()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

/// Tape of one forward pass.
///
/// Nodes are appended in evaluation order, so the tape is already
/// topologically sorted and backward() simply walks it in reverse. Parameter
/// nodes alias the parameter's storage and accumulate straight into
/// Parameter::grad, so a parameter used twice receives the sum of both
/// contributions. A graph is single-use.
template <std::floating_point T>
class Graph {
 public:
  /// Backward callback of a node: receives the node's output gradient.
  using BackwardFn = std::function<void(const Tensor<T>& out_grad, Graph& graph)>;

  /// With track_gradients = false no closures are kept (inference mode).
  explicit Graph(bool track_gradients = true) : tracking_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<T> value, bool requires_grad = false) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = requires_grad && tracking_;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  Var parameter(Parameter<T>& p) {
    Node node;
    node.ref = &p.value;
    node.param = &p;
    node.requires_grad = tracking_;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  /// Read-only alias of a parameter; never receives gradients.
  Var constant(const Tensor<T>& value) {
    Node node;
    node.ref = &value;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  /// Appends the result of an operation. `inputs` decide whether the node
  /// participates in backward; `backward` may be empty for constant results.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node node;
    node.owned = std::move(value);
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    node.requires_grad = needs && tracking_;
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& node = nodes_.at(v.id);
    return node.ref != nullptr ? *node.ref : node.owned;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool tracking() const { return tracking_; }
  std::size_t size() const { return nodes_.size(); }

  /// Zero-initialised (on first use) gradient buffer that operations add into.
  Tensor<T>& grad_buffer(Var v) {
    Node& node = nodes_.at(v.id);
    Tensor<T>& g = node.param != nullptr ? node.param->grad : node.grad;
    if (g.empty()) g = Tensor<T>(value(v).shape());
    return g;
  }

  /// Gradient of an input node after backward(); empty if never reached.
  const Tensor<T>& grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    return node.param != nullptr ? node.param->grad : node.grad;
  }

  /// Reverse sweep from a scalar root, seeded with d(root)/d(root) = 1.
  void backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward() needs a scalar root, got " + value(root).shape().str());
    backward(root, Tensor<T>(value(root).shape(), T(1)));
  }

  void backward(Var root, Tensor<T> seed) {
    if (!tracking_) throw std::logic_error("backward() on a graph built without gradient tracking");
    if (!(seed.shape() == value(root).shape())) throw ShapeError("seed shape does not match root");
    nodes_.at(root.id).grad = std::move(seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(node.grad, *this);
      // Intermediate gradients are dead once propagated.
      node.grad = Tensor<T>();
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool tracking_;
};

}  // namespace meshcorr::autodiff
