// Copyright 2026 The seginpaint Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode automatic differentiation over NCHW tensors.
//
// Every op returns a Var that remembers its inputs and a closure which
// pushes the output gradient back into them. `backward(loss)` walks the
// graph in reverse topological order. Leaves created with
// requires_grad=true (network parameters) accumulate gradients across
// calls until zero_grad().

#ifndef SEGINPAINT_AUTOGRAD_HPP
#define SEGINPAINT_AUTOGRAD_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seginpaint/tensor.hpp"

namespace seginpaint::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_) node_->grad = Tensor();
  }
  const Shape& shape() const { return node_->value.shape(); }
  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

inline bool wants(const std::shared_ptr<Node>& p) { return p && p->requires_grad; }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Column buffers are processed in chunks of at most this many doubles.
inline constexpr std::size_t kIm2ColBudget = std::size_t{1} << 21;

}  // namespace detail

/// Runs reverse accumulation from a scalar root.
inline void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw std::invalid_argument("backward() needs a scalar root");
  }
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release interior gradients; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

inline Var detach(const Var& x) { return Var(x.value(), false); }
inline Var constant(Tensor t) { return Var(std::move(t), false); }

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  auto pa = a.node(), pb = b.node();
  return detail::make_result(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (detail::wants(pa)) pa->grad_buffer() += self.grad;
    if (detail::wants(pb)) pb->grad_buffer() += self.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (detail::wants(pa)) pa->grad_buffer() += self.grad;
    if (detail::wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_result(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (detail::wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (detail::wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  auto pa = a.node();
  return detail::make_result(std::move(out), {a}, [pa, s](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// Scalar (rank-0) variable times tensor.
inline Var scale_by(const Var& s, const Var& x) {
  if (s.value().size() != 1) throw std::invalid_argument("scale_by: factor must be scalar");
  const double k = s.value()[0];
  Tensor out = x.value();
  for (auto& v : out.values()) v *= k;
  auto ps = s.node(), px = x.node();
  return detail::make_result(std::move(out), {s, x}, [ps, px](Node& self) {
    if (detail::wants(ps)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px->value[i];
      ps->grad_buffer()[0] += acc;
    }
    if (detail::wants(px)) {
      auto& g = px->grad_buffer();
      const double k2 = ps->value[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k2 * self.grad[i];
    }
  });
}

/// Multiplies by a constant tensor of the same shape.
inline Var mul_const(const Var& a, const Tensor& m) {
  a.value().require_same_shape(m, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  auto pa = a.node();
  return detail::make_result(std::move(out), {a}, [pa, m](Node& self) {
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * m[i];
  });
}

/// out = mask * pred + (1 - mask) * known, mask is N x 1 x H x W and broadcast
/// across channels.
inline Var composite(const Var& pred, const Var& known, const Tensor& mask) {
  const Tensor& p = pred.value();
  p.require_same_shape(known.value(), "composite");
  if (mask.rank() != 4 || mask.n() != p.n() || mask.c() != 1 || mask.h() != p.h() || mask.w() != p.w()) {
    throw std::invalid_argument("composite: mask shape " + shape_str(mask.shape()) + " incompatible with " +
                                shape_str(p.shape()));
  }
  Tensor out(p.shape());
  const std::size_t plane = static_cast<std::size_t>(p.h()) * p.w();
  for (int n = 0; n < p.n(); ++n) {
    const double* m = mask.data() + mask.offset(n, 0, 0, 0);
    for (int c = 0; c < p.c(); ++c) {
      const std::size_t base = p.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        // exact select for binary masks so the known region is copied bit for bit
        const double k = known.value()[base + i];
        out[base + i] = m[i] == 0.0 ? k : m[i] == 1.0 ? p[base + i] : m[i] * p[base + i] + (1.0 - m[i]) * k;
      }
    }
  }
  auto pp = pred.node(), pk = known.node();
  return detail::make_result(std::move(out), {pred, known}, [pp, pk, mask, plane](Node& self) {
    const Tensor& g = self.grad;
    for (int n = 0; n < g.n(); ++n) {
      const double* m = mask.data() + mask.offset(n, 0, 0, 0);
      for (int c = 0; c < g.c(); ++c) {
        const std::size_t base = g.offset(n, c, 0, 0);
        if (detail::wants(pp)) {
          auto& gp = pp->grad_buffer();
          for (std::size_t i = 0; i < plane; ++i) gp[base + i] += m[i] * g[base + i];
        }
        if (detail::wants(pk)) {
          auto& gk = pk->grad_buffer();
          for (std::size_t i = 0; i < plane; ++i) gk[base + i] += (1.0 - m[i]) * g[base + i];
        }
      }
    }
  });
}

inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = parts.front().value();
  int channels = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() != 4 || t.n() != first.n() || t.h() != first.h() || t.w() != first.w()) {
      throw std::invalid_argument("concat_channels: misaligned inputs " + shape_str(first.shape()) + " vs " +
                                  shape_str(t.shape()));
    }
    channels += t.c();
  }
  Tensor out({first.n(), channels, first.h(), first.w()});
  const std::size_t plane = static_cast<std::size_t>(first.h()) * first.w();
  for (int n = 0; n < first.n(); ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const Tensor& t = p.value();
      std::copy_n(t.data() + t.offset(n, 0, 0, 0), plane * t.c(), out.data() + out.offset(n, c0, 0, 0));
      c0 += t.c();
    }
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result(std::move(out), parts, [nodes, plane](Node& self) {
    const Tensor& g = self.grad;
    for (int n = 0; n < g.n(); ++n) {
      int c0 = 0;
      for (const auto& p : nodes) {
        const int pc = p->value.c();
        if (detail::wants(p)) {
          auto& gp = p->grad_buffer();
          const double* src = g.data() + g.offset(n, c0, 0, 0);
          double* dst = gp.data() + gp.offset(n, 0, 0, 0);
          for (std::size_t i = 0; i < plane * pc; ++i) dst[i] += src[i];
        }
        c0 += pc;
      }
    }
  });
}

// ---------------------------------------------------------------- activations

namespace detail {
template <class F, class D>
Var unary(const Var& x, F f, D dfdy_dx) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = f(v);
  auto px = x.node();
  return make_result(out, {x}, [px, out, dfdy_dx](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdy_dx(px->value[i], out[i]);
  });
}
}  // namespace detail

inline Var relu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope) {
  return detail::unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double in, double) { return in > 0.0 ? 1.0 : slope; });
}

inline Var sigmoid(const Var& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

/// log(clamp(x, eps, 1 - eps)); zero gradient where the clamp is active.
inline Var log_clamped(const Var& x, double eps) {
  return detail::unary(
      x, [eps](double v) { return std::log(std::clamp(v, eps, 1.0 - eps)); },
      [eps](double in, double) { return (in >= eps && in <= 1.0 - eps) ? 1.0 / in : 0.0; });
}

/// Softmax across the channel axis of an NCHW tensor.
inline Var softmax_channels(const Var& x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  const std::size_t plane = static_cast<std::size_t>(in.h()) * in.w();
  const int channels = in.c();
  for (int n = 0; n < in.n(); ++n) {
    const std::size_t base = in.offset(n, 0, 0, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = in[base + i];
      for (int c = 1; c < channels; ++c) mx = std::max(mx, in[base + c * plane + i]);
      double total = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double e = std::exp(in[base + c * plane + i] - mx);
        out[base + c * plane + i] = e;
        total += e;
      }
      for (int c = 0; c < channels; ++c) out[base + c * plane + i] /= total;
    }
  }
  auto px = x.node();
  return detail::make_result(out, {x}, [px, out, plane, channels](Node& self) {
    auto& g = px->grad_buffer();
    for (int n = 0; n < out.n(); ++n) {
      const std::size_t base = out.offset(n, 0, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        double dot = 0.0;
        for (int c = 0; c < channels; ++c) dot += self.grad[base + c * plane + i] * out[base + c * plane + i];
        for (int c = 0; c < channels; ++c) {
          const std::size_t k = base + c * plane + i;
          g[k] += out[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------- spatial

enum class PadMode { zero, reflect };

struct Padding {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
};

namespace detail {
// Source index for padded coordinate i, or -1 for a zero tap. Reflection
// folds repeatedly so pads wider than the input stay defined.
inline int padded_source(int i, int before, int extent, PadMode mode) {
  int s = i - before;
  if (s >= 0 && s < extent) return s;
  if (mode == PadMode::zero) return -1;
  if (extent == 1) return 0;
  const int period = 2 * (extent - 1);
  s %= period;
  if (s < 0) s += period;
  return s < extent ? s : period - s;
}
}  // namespace detail

inline Var pad2d(const Var& x, Padding pad, PadMode mode) {
  const Tensor& in = x.value();
  const int H = in.h(), W = in.w();
  const int Ho = H + pad.top + pad.bottom, Wo = W + pad.left + pad.right;
  std::vector<int> rows(static_cast<std::size_t>(Ho)), cols(static_cast<std::size_t>(Wo));
  for (int i = 0; i < Ho; ++i) rows[i] = detail::padded_source(i, pad.top, H, mode);
  for (int j = 0; j < Wo; ++j) cols[j] = detail::padded_source(j, pad.left, W, mode);
  Tensor out({in.n(), in.c(), Ho, Wo});
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c)
      for (int i = 0; i < Ho; ++i) {
        if (rows[i] < 0) continue;
        for (int j = 0; j < Wo; ++j) {
          if (cols[j] >= 0) out.at(n, c, i, j) = in.at(n, c, rows[i], cols[j]);
        }
      }
  auto px = x.node();
  return detail::make_result(std::move(out), {x}, [px, rows, cols](Node& self) {
    auto& g = px->grad_buffer();
    const Tensor& go = self.grad;
    for (int n = 0; n < go.n(); ++n)
      for (int c = 0; c < go.c(); ++c)
        for (int i = 0; i < go.h(); ++i) {
          if (rows[i] < 0) continue;
          for (int j = 0; j < go.w(); ++j) {
            if (cols[j] >= 0) g.at(n, c, rows[i], cols[j]) += go.at(n, c, i, j);
          }
        }
  });
}

namespace detail {
struct ConvGeometry {
  int cin, h, w, kh, kw, stride, dilation, ho, wo;
  std::size_t k() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t p() const { return static_cast<std::size_t>(ho) * wo; }
};

inline void im2col(const double* x, const ConvGeometry& g, std::size_t p0, std::size_t pc, double* cols) {
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx, ++row) {
        double* dst = cols + row * pc;
        const double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (std::size_t q = 0; q < pc; ++q) {
          const std::size_t p = p0 + q;
          const int oy = static_cast<int>(p / g.wo), ox = static_cast<int>(p % g.wo);
          dst[q] = plane[(oy * g.stride + ky * g.dilation) * g.w + ox * g.stride + kx * g.dilation];
        }
      }
}

inline void col2im(const double* cols, const ConvGeometry& g, std::size_t p0, std::size_t pc, double* x) {
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx, ++row) {
        const double* src = cols + row * pc;
        double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (std::size_t q = 0; q < pc; ++q) {
          const std::size_t p = p0 + q;
          const int oy = static_cast<int>(p / g.wo), ox = static_cast<int>(p % g.wo);
          plane[(oy * g.stride + ky * g.dilation) * g.w + ox * g.stride + kx * g.dilation] += src[q];
        }
      }
}
}  // namespace detail

/// Unpadded 2-D convolution. weight is Co x Ci x kh x kw; bias (optional) is Co.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int dilation) {
  const Tensor& in = x.value();
  const Tensor& wt = weight.value();
  if (in.rank() != 4 || wt.rank() != 4 || wt.dim(1) != in.c()) {
    throw std::invalid_argument("conv2d: input " + shape_str(in.shape()) + " incompatible with weight " +
                                shape_str(wt.shape()));
  }
  detail::ConvGeometry g{in.c(), in.h(), in.w(), wt.dim(2), wt.dim(3), stride, dilation, 0, 0};
  const int span_h = dilation * (g.kh - 1) + 1, span_w = dilation * (g.kw - 1) + 1;
  if (in.h() < span_h || in.w() < span_w) {
    throw std::invalid_argument("conv2d: input " + shape_str(in.shape()) + " smaller than kernel span");
  }
  g.ho = (in.h() - span_h) / stride + 1;
  g.wo = (in.w() - span_w) / stride + 1;
  const int co = wt.dim(0);
  const std::size_t K = g.k(), P = g.p();
  const std::size_t chunk = std::max<std::size_t>(1, std::min(P, detail::kIm2ColBudget / std::max<std::size_t>(K, 1)));

  Tensor out({in.n(), co, g.ho, g.wo});
  detail::ConstRowMap wmat(wt.data(), co, static_cast<Eigen::Index>(K));
  Buffer cols(K * chunk);
  for (int n = 0; n < in.n(); ++n) {
    detail::RowMap y(out.data() + out.offset(n, 0, 0, 0), co, static_cast<Eigen::Index>(P));
    const double* xn = in.data() + in.offset(n, 0, 0, 0);
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const std::size_t pc = std::min(chunk, P - p0);
      detail::im2col(xn, g, p0, pc, cols.data());
      detail::ConstRowMap cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(pc));
      y.middleCols(static_cast<Eigen::Index>(p0), static_cast<Eigen::Index>(pc)).noalias() = wmat * cm;
    }
    if (bias.defined()) {
      for (int c = 0; c < co; ++c) y.row(c).array() += bias.value()[c];
    }
  }

  auto px = x.node(), pw = weight.node(), pb = bias.node();
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(std::move(out), inputs, [px, pw, pb, g, co, chunk](Node& self) {
    const Tensor& in = px->value;
    const std::size_t K = g.k(), P = g.p();
    detail::ConstRowMap wmat(pw->value.data(), co, static_cast<Eigen::Index>(K));
    Buffer cols(K * chunk), dcols;
    const bool need_x = detail::wants(px), need_w = detail::wants(pw), need_b = detail::wants(pb);
    if (need_x) dcols.resize(K * chunk);
    for (int n = 0; n < in.n(); ++n) {
      detail::ConstRowMap dy(self.grad.data() + self.grad.offset(n, 0, 0, 0), co, static_cast<Eigen::Index>(P));
      if (need_b) {
        auto& gb = pb->grad_buffer();
        for (int c = 0; c < co; ++c) {
          const double* row = dy.data() + static_cast<std::size_t>(c) * P;
          gb[c] += std::accumulate(row, row + P, 0.0);
        }
      }
      const double* xn = in.data() + in.offset(n, 0, 0, 0);
      for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
        const std::size_t pc = std::min(chunk, P - p0);
        auto dyc = dy.middleCols(static_cast<Eigen::Index>(p0), static_cast<Eigen::Index>(pc));
        if (need_w) {
          detail::im2col(xn, g, p0, pc, cols.data());
          detail::ConstRowMap cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(pc));
          detail::RowMap gw(pw->grad_buffer().data(), co, static_cast<Eigen::Index>(K));
          gw.noalias() += dyc * cm.transpose();
        }
        if (need_x) {
          detail::RowMap dc(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(pc));
          dc.noalias() = wmat.transpose() * dyc;
          auto& gx = px->grad_buffer();
          detail::col2im(dcols.data(), g, p0, pc, gx.data() + gx.offset(n, 0, 0, 0));
        }
      }
    }
  });
}

namespace detail {
// Normalizes groups of `count` values located at base + i * stride
// (i < count) for each base offset in `groups`.
struct NormGroups {
  std::vector<std::vector<std::size_t>> members;
};

inline Var normalize_groups(const Var& x, NormGroups groups, double eps, std::vector<double>* means,
                            std::vector<double>* vars) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  std::vector<double> inv_std(groups.members.size());
  for (std::size_t gi = 0; gi < groups.members.size(); ++gi) {
    const auto& idx = groups.members[gi];
    double mean = 0.0;
    for (auto k : idx) mean += in[k];
    mean /= static_cast<double>(idx.size());
    double var = 0.0;
    for (auto k : idx) var += (in[k] - mean) * (in[k] - mean);
    var /= static_cast<double>(idx.size());
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    for (auto k : idx) out[k] = (in[k] - mean) * inv_std[gi];
    if (means) means->push_back(mean);
    if (vars) vars->push_back(var);
  }
  auto px = x.node();
  return make_result(out, {x}, [px, out, groups = std::move(groups), inv_std](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t gi = 0; gi < groups.members.size(); ++gi) {
      const auto& idx = groups.members[gi];
      const double m = static_cast<double>(idx.size());
      double mean_dy = 0.0, mean_dyy = 0.0;
      for (auto k : idx) {
        mean_dy += self.grad[k];
        mean_dyy += self.grad[k] * out[k];
      }
      mean_dy /= m;
      mean_dyy /= m;
      for (auto k : idx) g[k] += inv_std[gi] * (self.grad[k] - mean_dy - out[k] * mean_dyy);
    }
  });
}
}  // namespace detail

/// Per-sample, per-channel normalization without affine parameters.
inline Var instance_norm(const Var& x, double eps = 1e-5) {
  const Tensor& in = x.value();
  detail::NormGroups groups;
  const std::size_t plane = static_cast<std::size_t>(in.h()) * in.w();
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      std::vector<std::size_t> idx(plane);
      std::iota(idx.begin(), idx.end(), in.offset(n, c, 0, 0));
      groups.members.push_back(std::move(idx));
    }
  return detail::normalize_groups(x, std::move(groups), eps, nullptr, nullptr);
}

/// Batch statistics per channel. When `training` is false, the running
/// statistics are applied as constants.
inline Var batch_norm(const Var& x, Tensor& running_mean, Tensor& running_var, bool training, double momentum = 0.1,
                      double eps = 1e-5) {
  const Tensor& in = x.value();
  const std::size_t plane = static_cast<std::size_t>(in.h()) * in.w();
  if (!training) {
    Tensor out(in.shape());
    std::vector<double> scale(static_cast<std::size_t>(in.c()));
    for (int c = 0; c < in.c(); ++c) scale[c] = 1.0 / std::sqrt(running_var[c] + eps);
    for (int n = 0; n < in.n(); ++n)
      for (int c = 0; c < in.c(); ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = in.offset(n, c, 0, 0) + i;
          out[k] = (in[k] - running_mean[c]) * scale[c];
        }
    auto px = x.node();
    return detail::make_result(std::move(out), {x}, [px, scale, plane](Node& self) {
      auto& g = px->grad_buffer();
      for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = g.offset(n, c, 0, 0) + i;
            g[k] += self.grad[k] * scale[c];
          }
    });
  }
  detail::NormGroups groups;
  for (int c = 0; c < in.c(); ++c) {
    std::vector<std::size_t> idx;
    idx.reserve(plane * in.n());
    for (int n = 0; n < in.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i) idx.push_back(in.offset(n, c, 0, 0) + i);
    groups.members.push_back(std::move(idx));
  }
  std::vector<double> means, vars;
  Var out = detail::normalize_groups(x, std::move(groups), eps, &means, &vars);
  for (int c = 0; c < in.c(); ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * means[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * vars[c];
  }
  return out;
}

inline Var upsample_nearest2x(const Var& x) {
  const Tensor& in = x.value();
  Tensor out({in.n(), in.c(), in.h() * 2, in.w() * 2});
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c)
      for (int i = 0; i < out.h(); ++i)
        for (int j = 0; j < out.w(); ++j) out.at(n, c, i, j) = in.at(n, c, i / 2, j / 2);
  auto px = x.node();
  return detail::make_result(std::move(out), {x}, [px](Node& self) {
    auto& g = px->grad_buffer();
    const Tensor& go = self.grad;
    for (int n = 0; n < go.n(); ++n)
      for (int c = 0; c < go.c(); ++c)
        for (int i = 0; i < go.h(); ++i)
          for (int j = 0; j < go.w(); ++j) g.at(n, c, i / 2, j / 2) += go.at(n, c, i, j);
  });
}

/// Mean over non-overlapping factor x factor blocks.
inline Var avg_pool(const Var& x, int factor) {
  const Tensor& in = x.value();
  if (factor < 1 || in.h() % factor != 0 || in.w() % factor != 0) {
    throw std::invalid_argument("avg_pool: spatial size " + shape_str(in.shape()) + " not divisible by " +
                                std::to_string(factor));
  }
  if (factor == 1) return x;
  Tensor out({in.n(), in.c(), in.h() / factor, in.w() / factor});
  const double inv = 1.0 / (factor * factor);
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c)
      for (int i = 0; i < out.h(); ++i)
        for (int j = 0; j < out.w(); ++j) {
          double s = 0.0;
          for (int a = 0; a < factor; ++a)
            for (int b = 0; b < factor; ++b) s += in.at(n, c, i * factor + a, j * factor + b);
          out.at(n, c, i, j) = s * inv;
        }
  auto px = x.node();
  return detail::make_result(std::move(out), {x}, [px, factor, inv](Node& self) {
    auto& g = px->grad_buffer();
    const Tensor& go = self.grad;
    for (int n = 0; n < go.n(); ++n)
      for (int c = 0; c < go.c(); ++c)
        for (int i = 0; i < go.h(); ++i)
          for (int j = 0; j < go.w(); ++j)
            for (int a = 0; a < factor; ++a)
              for (int b = 0; b < factor; ++b) g.at(n, c, i * factor + a, j * factor + b) += go.at(n, c, i, j) * inv;
  });
}

struct Box {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;
};

/// Crops one box per sample and resizes it bilinearly (half-pixel centers,
/// edge clamped) to out_h x out_w. An empty box yields zeros.
inline Var crop_resize_bilinear(const Var& x, const std::vector<Box>& boxes, int out_h, int out_w) {
  const Tensor& in = x.value();
  if (static_cast<int>(boxes.size()) != in.n()) throw std::invalid_argument("crop_resize_bilinear: one box per sample");
  struct Tap {
    std::size_t src;
    double weight;
  };
  // taps[n][oy*out_w+ox] -> four (offset within channel plane, weight)
  std::vector<std::vector<std::array<Tap, 4>>> taps(boxes.size());
  auto axis = [](int o, int out, int extent) {
    double s = (o + 0.5) * extent / out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, extent - 1);
    return std::tuple<int, int, double>{i0, i1, s - i0};
  };
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const Box& b = boxes[n];
    if (b.height <= 0 || b.width <= 0) continue;  // empty box: zero output, no taps
    if (b.y < 0 || b.x < 0 || b.y + b.height > in.h() || b.x + b.width > in.w()) {
      throw std::invalid_argument("crop_resize_bilinear: box outside frame");
    }
    taps[n].resize(static_cast<std::size_t>(out_h) * out_w);
    for (int oy = 0; oy < out_h; ++oy) {
      auto [y0, y1, wy] = axis(oy, out_h, b.height);
      for (int ox = 0; ox < out_w; ++ox) {
        auto [x0, x1, wx] = axis(ox, out_w, b.width);
        auto at = [&](int yy, int xx) { return static_cast<std::size_t>(b.y + yy) * in.w() + (b.x + xx); };
        taps[n][static_cast<std::size_t>(oy) * out_w + ox] = {Tap{at(y0, x0), (1 - wy) * (1 - wx)},
                                                              Tap{at(y0, x1), (1 - wy) * wx},
                                                              Tap{at(y1, x0), wy * (1 - wx)}, Tap{at(y1, x1), wy * wx}};
      }
    }
  }
  Tensor out({in.n(), in.c(), out_h, out_w});
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      const double* src = in.data() + in.offset(n, c, 0, 0);
      double* dst = out.data() + out.offset(n, c, 0, 0);
      for (std::size_t p = 0; p < taps[n].size(); ++p) {
        double v = 0.0;
        for (const auto& t : taps[n][p]) v += t.weight * src[t.src];
        dst[p] = v;
      }
    }
  auto px = x.node();
  return detail::make_result(std::move(out), {x}, [px, taps](Node& self) {
    auto& g = px->grad_buffer();
    const Tensor& go = self.grad;
    for (int n = 0; n < go.n(); ++n)
      for (int c = 0; c < go.c(); ++c) {
        double* dst = g.data() + g.offset(n, c, 0, 0);
        const double* src = go.data() + go.offset(n, c, 0, 0);
        for (std::size_t p = 0; p < taps[n].size(); ++p)
          for (const auto& t : taps[n][p]) dst[t.src] += t.weight * src[p];
      }
  });
}

// ---------------------------------------------------------------- reductions

inline Var sum(const Var& x) {
  auto px = x.node();
  return detail::make_result(Tensor::scalar(x.value().sum()), {x}, [px](Node& self) {
    auto& g = px->grad_buffer();
    const double d = self.grad[0];
    for (auto& v : g.values()) v += d;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Sum of weight * |a - b| with a constant weight tensor.
inline Var weighted_abs_diff_sum(const Var& a, const Var& b, const Tensor& weight) {
  a.value().require_same_shape(b.value(), "weighted_abs_diff_sum");
  a.value().require_same_shape(weight, "weighted_abs_diff_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) total += weight[i] * std::abs(a.value()[i] - b.value()[i]);
  auto pa = a.node(), pb = b.node();
  return detail::make_result(Tensor::scalar(total), {a, b}, [pa, pb, weight](Node& self) {
    const double d = self.grad[0];
    for (std::size_t i = 0; i < weight.size(); ++i) {
      const double diff = pa->value[i] - pb->value[i];
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (s == 0.0 || weight[i] == 0.0) continue;
      if (detail::wants(pa)) pa->grad_buffer()[i] += d * weight[i] * s;
      if (detail::wants(pb)) pb->grad_buffer()[i] -= d * weight[i] * s;
    }
  });
}

inline Var squared_sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v * v;
  auto px = x.node();
  return detail::make_result(Tensor::scalar(total), {x}, [px](Node& self) {
    auto& g = px->grad_buffer();
    const double d = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * d * px->value[i];
  });
}

}  // namespace seginpaint::ag

#endif  // SEGINPAINT_AUTOGRAD_HPP
