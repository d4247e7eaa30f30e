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

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "meshcorr/autodiff/graph.hpp"

namespace meshcorr::autodiff {

enum class Padding { same, valid };

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Output extent and leading pad of one spatial axis (TensorFlow convention:
/// the odd pixel of an asymmetric same-pad goes to the trailing side).
struct AxisGeometry {
  int out = 0;
  int pad = 0;
};

inline AxisGeometry axis_geometry(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::same) {
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
  }
  if (in < kernel) throw ShapeError("valid padding needs input >= kernel");
  return {(in - kernel) / stride + 1, 0};
}

/// One sample's patches as rows: (out_h*out_w) x (k*k*C), zero outside.
template <class T>
void im2col(const T* image, int h, int w, int c, int k, int stride, AxisGeometry gy, AxisGeometry gx, T* col) {
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int oy = 0; oy < gy.out; ++oy) {
    for (int ox = 0; ox < gx.out; ++ox) {
      T* row = col + (static_cast<std::size_t>(oy) * gx.out + ox) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - gy.pad;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - gx.pad;
          T* dst = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::fill(dst, dst + c, T(0));
          } else {
            const T* src = image + (static_cast<std::size_t>(iy) * w + ix) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch rows back into the image.
template <class T>
void col2im(const T* col, int h, int w, int c, int k, int stride, AxisGeometry gy, AxisGeometry gx, T* image) {
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int oy = 0; oy < gy.out; ++oy) {
    for (int ox = 0; ox < gx.out; ++ox) {
      const T* row = col + (static_cast<std::size_t>(oy) * gx.out + ox) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride + ky - gy.pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride + kx - gx.pad;
          if (ix < 0 || ix >= w) continue;
          const T* src = row + (static_cast<std::size_t>(ky) * k + kx) * c;
          T* dst = image + (static_cast<std::size_t>(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation, NHWC input, weights (k, k, C_in, C_out), optional
/// bias (1, 1, 1, C_out). Zero padding; same-padding yields ceil(H / stride).
template <std::floating_point T>
Var conv2d(Graph<T>& g, Var input, Var weights, const Var* bias, int stride, Padding padding) {
  const Shape xs = g.value(input).shape();
  const Shape ws = g.value(weights).shape();
  if (ws.n != ws.h) throw ShapeError("conv2d: only square kernels are supported, got " + ws.str());
  if (ws.w != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weights expect " + std::to_string(ws.w));
  }
  if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
  if (bias != nullptr && !(g.value(*bias).shape() == Shape{1, 1, 1, ws.c})) {
    throw ShapeError("conv2d: bias shape " + g.value(*bias).shape().str() + " does not match " +
                     std::to_string(ws.c) + " filters");
  }
  const int k = ws.n;
  const int cin = xs.c;
  const int cout = ws.c;
  const auto gy = detail::axis_geometry(xs.h, k, stride, padding);
  const auto gx = detail::axis_geometry(xs.w, k, stride, padding);
  const bool pointwise = (k == 1 && stride == 1);
  const Eigen::Index patch = static_cast<Eigen::Index>(k) * k * cin;
  const Eigen::Index out_pixels = static_cast<Eigen::Index>(gy.out) * gx.out;

  Tensor<T> out(Shape{xs.n, gy.out, gx.out, cout});
  const Tensor<T>& x = g.value(input);
  detail::ConstMatrixMap<T> wmat(g.value(weights).data(), patch, cout);
  if (pointwise) {
    detail::ConstMatrixMap<T> xmat(x.data(), static_cast<Eigen::Index>(xs.n) * out_pixels, cin);
    detail::MatrixMap<T> ymat(out.data(), static_cast<Eigen::Index>(xs.n) * out_pixels, cout);
    ymat.noalias() = xmat * wmat;
  } else {
    std::vector<T> col(static_cast<std::size_t>(out_pixels * patch));
    const std::size_t in_stride = static_cast<std::size_t>(xs.h) * xs.w * cin;
    for (int n = 0; n < xs.n; ++n) {
      detail::im2col(x.data() + n * in_stride, xs.h, xs.w, cin, k, stride, gy, gx, col.data());
      detail::ConstMatrixMap<T> cmat(col.data(), out_pixels, patch);
      detail::MatrixMap<T> ymat(out.data() + static_cast<std::size_t>(n) * out_pixels * cout, out_pixels, cout);
      ymat.noalias() = cmat * wmat;
    }
  }
  if (bias != nullptr) {
    const T* b = g.value(*bias).data();
    T* y = out.data();
    const std::size_t pixels = out.size() / cout;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (int ch = 0; ch < cout; ++ch) y[p * cout + ch] += b[ch];
    }
  }

  const bool has_bias = bias != nullptr;
  const Var bias_var = has_bias ? *bias : Var{};
  auto backward = [=](const Tensor<T>& dy, Graph<T>& graph) {
    const Tensor<T>& xv = graph.value(input);
    detail::ConstMatrixMap<T> w(graph.value(weights).data(), patch, cout);
    const std::size_t in_stride = static_cast<std::size_t>(xs.h) * xs.w * cin;
    const bool want_x = graph.requires_grad(input);
    const bool want_w = graph.requires_grad(weights);
    if (has_bias && graph.requires_grad(bias_var)) {
      T* db = graph.grad_buffer(bias_var).data();
      const std::size_t pixels = dy.size() / cout;
      for (std::size_t p = 0; p < pixels; ++p) {
        for (int ch = 0; ch < cout; ++ch) db[ch] += dy[p * cout + ch];
      }
    }
    if (pointwise) {
      const Eigen::Index rows = static_cast<Eigen::Index>(xs.n) * out_pixels;
      detail::ConstMatrixMap<T> dymat(dy.data(), rows, cout);
      if (want_w) {
        detail::ConstMatrixMap<T> xmat(xv.data(), rows, cin);
        detail::MatrixMap<T> dw(graph.grad_buffer(weights).data(), patch, cout);
        dw.noalias() += xmat.transpose() * dymat;
      }
      if (want_x) {
        detail::MatrixMap<T> dx(graph.grad_buffer(input).data(), rows, cin);
        dx.noalias() += dymat * w.transpose();
      }
      return;
    }
    std::vector<T> col(static_cast<std::size_t>(out_pixels * patch));
    for (int n = 0; n < xs.n; ++n) {
      detail::ConstMatrixMap<T> dymat(dy.data() + static_cast<std::size_t>(n) * out_pixels * cout, out_pixels, cout);
      if (want_w) {
        detail::im2col(xv.data() + n * in_stride, xs.h, xs.w, cin, k, stride, gy, gx, col.data());
        detail::ConstMatrixMap<T> cmat(col.data(), out_pixels, patch);
        detail::MatrixMap<T> dw(graph.grad_buffer(weights).data(), patch, cout);
        dw.noalias() += cmat.transpose() * dymat;
      }
      if (want_x) {
        detail::MatrixMap<T> dcol(col.data(), out_pixels, patch);
        dcol.noalias() = dymat * w.transpose();
        detail::col2im(col.data(), xs.h, xs.w, cin, k, stride, gy, gx,
                       graph.grad_buffer(input).data() + n * in_stride);
      }
    }
  };
  if (has_bias) return g.record(std::move(out), {input, weights, *bias}, backward);
  return g.record(std::move(out), {input, weights}, backward);
}

/// Windowed maximum with same-padding (padding never wins). Gradient routes
/// to the first maximal element of each window in row-major order.
template <std::floating_point T>
Var max_pool(Graph<T>& g, Var input, int window, int stride) {
  const Tensor<T>& x = g.value(input);
  const Shape xs = x.shape();
  if (window <= 0 || stride <= 0) throw ShapeError("max_pool: window and stride must be positive");
  const auto gy = detail::axis_geometry(xs.h, window, stride, Padding::same);
  const auto gx = detail::axis_geometry(xs.w, window, stride, Padding::same);
  Tensor<T> out(Shape{xs.n, gy.out, gx.out, xs.c});
  std::vector<std::uint32_t> argmax(out.size());
  for (int n = 0; n < xs.n; ++n) {
    for (int oy = 0; oy < gy.out; ++oy) {
      for (int ox = 0; ox < gx.out; ++ox) {
        for (int ch = 0; ch < xs.c; ++ch) {
          T best = T(0);
          std::size_t best_index = 0;
          bool found = false;
          for (int ky = 0; ky < window; ++ky) {
            const int iy = oy * stride + ky - gy.pad;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kx = 0; kx < window; ++kx) {
              const int ix = ox * stride + kx - gx.pad;
              if (ix < 0 || ix >= xs.w) continue;
              const std::size_t idx = x.offset(n, iy, ix, ch);
              if (!found || x[idx] > best) {
                best = x[idx];
                best_index = idx;
                found = true;
              }
            }
          }
          const std::size_t o = out.offset(n, oy, ox, ch);
          out[o] = best;
          argmax[o] = static_cast<std::uint32_t>(best_index);
        }
      }
    }
  }
  return g.record(std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor<T>& dy, Graph<T>& graph) {
    T* dx = graph.grad_buffer(input).data();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  });
}

template <std::floating_point T>
Var relu(Graph<T>& g, Var input) {
  const Tensor<T>& x = g.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return g.record(std::move(out), {input}, [input](const Tensor<T>& dy, Graph<T>& graph) {
    const Tensor<T>& xv = graph.value(input);
    T* dx = graph.grad_buffer(input).data();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

/// Concatenated ReLU: C channels in, 2C out = [max(x, 0), max(-x, 0)].
template <std::floating_point T>
Var crelu(Graph<T>& g, Var input) {
  const Tensor<T>& x = g.value(input);
  const Shape xs = x.shape();
  const int c = xs.c;
  Tensor<T> out(Shape{xs.n, xs.h, xs.w, 2 * c});
  const std::size_t pixels = x.size() / c;
  for (std::size_t p = 0; p < pixels; ++p) {
    const T* src = x.data() + p * c;
    T* dst = out.data() + p * 2 * c;
    for (int ch = 0; ch < c; ++ch) {
      dst[ch] = src[ch] > T(0) ? src[ch] : T(0);
      dst[c + ch] = src[ch] < T(0) ? -src[ch] : T(0);
    }
  }
  return g.record(std::move(out), {input}, [input, c, pixels](const Tensor<T>& dy, Graph<T>& graph) {
    const Tensor<T>& xv = graph.value(input);
    T* dx = graph.grad_buffer(input).data();
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* src = xv.data() + p * c;
      const T* d = dy.data() + p * 2 * c;
      T* out_grad = dx + p * c;
      for (int ch = 0; ch < c; ++ch) {
        if (src[ch] > T(0)) {
          out_grad[ch] += d[ch];
        } else if (src[ch] < T(0)) {
          out_grad[ch] -= d[c + ch];
        }
      }
    }
  });
}

/// 2x nearest-neighbour spatial upsampling.
template <std::floating_point T>
Var unpool_nn(Graph<T>& g, Var input) {
  const Tensor<T>& x = g.value(input);
  const Shape xs = x.shape();
  Tensor<T> out(Shape{xs.n, 2 * xs.h, 2 * xs.w, xs.c});
  for (int n = 0; n < xs.n; ++n) {
    for (int y = 0; y < 2 * xs.h; ++y) {
      for (int xx = 0; xx < 2 * xs.w; ++xx) {
        const T* src = x.data() + x.offset(n, y / 2, xx / 2, 0);
        std::copy(src, src + xs.c, out.data() + out.offset(n, y, xx, 0));
      }
    }
  }
  return g.record(std::move(out), {input}, [input, xs](const Tensor<T>& dy, Graph<T>& graph) {
    Tensor<T>& dx = graph.grad_buffer(input);
    for (int n = 0; n < xs.n; ++n) {
      for (int y = 0; y < 2 * xs.h; ++y) {
        for (int xx = 0; xx < 2 * xs.w; ++xx) {
          const T* src = dy.data() + dy.offset(n, y, xx, 0);
          T* dst = dx.data() + dx.offset(n, y / 2, xx / 2, 0);
          for (int ch = 0; ch < xs.c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  });
}

template <std::floating_point T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  if (!(x.shape() == y.shape())) throw ShapeError("add: " + x.shape().str() + " vs " + y.shape().str());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return g.record(std::move(out), {a, b}, [a, b](const Tensor<T>& dy, Graph<T>& graph) {
    for (Var v : {a, b}) {
      if (!graph.requires_grad(v)) continue;
      T* d = graph.grad_buffer(v).data();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

/// Scalar sum(x * weights); the usual probe objective for gradient checks.
template <std::floating_point T>
Var weighted_sum(Graph<T>& g, Var input, Tensor<T> weights) {
  const Tensor<T>& x = g.value(input);
  if (!(x.shape() == weights.shape())) throw ShapeError("weighted_sum: shape mismatch");
  T total = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  Tensor<T> out(Shape{}, total);
  return g.record(std::move(out), {input}, [input, weights = std::move(weights)](const Tensor<T>& dy, Graph<T>& graph) {
    T* dx = graph.grad_buffer(input).data();
    for (std::size_t i = 0; i < weights.size(); ++i) dx[i] += dy[0] * weights[i];
  });
}

}  // namespace meshcorr::autodiff
