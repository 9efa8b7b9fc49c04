#pragma once

// Dense 5-D tensor (batch, channel, time, height, width) in double precision
// with reverse-mode gradient computation. Ops are pure: inputs are never
// mutated and every op returns a fresh tensor wired to its parents, so
// disjoint graphs can be evaluated on independent threads. A single graph's
// backward pass is sequential.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tcs3d {

using Shape5 = std::array<std::size_t, 5>;  // N, C, T, H, W

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

inline std::string shape_str(const Shape5& s) {
  std::string out = "(";
  for (std::size_t d = 0; d < 5; ++d) {
    out += std::to_string(s[d]);
    out += d + 1 < 5 ? "," : ")";
  }
  return out;
}

inline std::size_t numel(const Shape5& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e != 0 && n > std::numeric_limits<std::size_t>::max() / e)
      fail("tensor extent product overflows size_t: " + shape_str(s));
    n *= e;
  }
  return n;
}

// row-major strides; the W axis is contiguous
inline std::array<std::size_t, 5> strides_of(const Shape5& s) {
  return {s[1] * s[2] * s[3] * s[4], s[2] * s[3] * s[4], s[3] * s[4], s[4], 1};
}

inline std::size_t flat_index(const Shape5& s, std::size_t n, std::size_t c, std::size_t t,
                              std::size_t h, std::size_t w) {
  return (((n * s[1] + c) * s[2] + t) * s[3] + h) * s[4] + w;
}

enum class Axis : std::size_t { C = 1, T = 2, H = 3, W = 4 };
enum class PoolMode { Avg, Max };

namespace detail {

struct Node {
  Shape5 shape{};
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward (or accumulation) touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  bool is_leaf() const { return parents.empty(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor full(const Shape5& shape, double fill, bool requires_grad = false) {
    return from_values(shape, std::vector<double>(numel(shape), fill), requires_grad);
  }

  static Tensor from_values(const Shape5& shape, std::vector<double> values,
                            bool requires_grad = false) {
    check(values.size() == numel(shape),
          "value count " + std::to_string(values.size()) + " does not match shape " +
              shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = shape;
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  // Extension point for ops with custom gradients (losses, fused kernels).
  // backprop reads node.grad and accumulates into node.parents' grads.
  static Tensor make_op(const Shape5& shape, std::vector<double> values,
                        std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop) {
    check(values.size() == numel(shape), "op output value count does not match shape");
    auto n = std::make_shared<detail::Node>();
    n->shape = shape;
    n->value = std::move(values);
    bool rg = false;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) {
      check(p.defined(), "op parent tensor is undefined");
      n->parents.push_back(p.node_);
      rg = rg || p.node_->requires_grad;
    }
    n->requires_grad = rg;
    if (rg) n->backprop = std::move(backprop);
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape5& shape() const { return node().shape; }
  std::size_t size() const { return node().value.size(); }
  bool is_leaf() const { return node().is_leaf(); }

  std::span<const double> values() const { return node().value; }
  // In-place access for leaf tensors (parameters, data buffers). Mutating an
  // op output invalidates gradients recorded for the graph that produced it.
  std::span<double> values_mut() { return node().value; }

  double at(std::size_t n, std::size_t c, std::size_t t, std::size_t h, std::size_t w) const {
    return node().value[flat_index(shape(), n, c, t, h, w)];
  }

  bool requires_grad() const { return node().requires_grad; }

  void set_requires_grad(bool rg) {
    check(node().is_leaf(), "requires_grad can only be toggled on leaf tensors");
    node().requires_grad = rg;
  }

  bool has_grad() const { return !node().grad.empty(); }

  std::span<const double> grad() const {
    check(has_grad(), "tensor has no gradient; run backward first");
    return node().grad;
  }

  std::span<double> grad_mut() {
    node().ensure_grad();
    return node().grad;
  }

  void zero_grad() { node().grad.clear(); }

  detail::Node* raw() const { return node_.get(); }

 private:
  detail::Node& node() const {
    check(node_ != nullptr, "use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Accumulates d(root)/d(leaf) into every requires_grad leaf reachable from
// root. root must be a scalar (all extents 1). Non-leaf gradients are
// recomputed from scratch on every call; leaf gradients accumulate until
// zero_grad() clears them.
inline void backward(const Tensor& root) {
  check(root.defined(), "backward: undefined tensor");
  check(root.size() == 1, "backward: root must be a scalar, got shape " + shape_str(root.shape()));
  detail::Node* r = root.raw();
  check(r->requires_grad, "backward: root is not connected to any requires_grad leaf");

  // iterative post-order DFS over the requires_grad subgraph
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf() && n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Tensor ewise_add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "ewise_add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

// Multiplies feature by attn, replicating attn along every axis where its
// extent is 1. Output has the feature's shape. Gradients w.r.t. attn sum over
// the broadcast axes.
inline Tensor broadcast_mul(const Tensor& feature, const Tensor& attn) {
  const Shape5& fs = feature.shape();
  const Shape5& as = attn.shape();
  for (std::size_t d = 0; d < 5; ++d)
    check(as[d] == fs[d] || as[d] == 1, "broadcast_mul: axis " + std::to_string(d) + " extent " +
                                            std::to_string(as[d]) + " is not broadcastable to " +
                                            std::to_string(fs[d]));
  const auto astr = strides_of(as);
  const auto fv = feature.values();
  const auto av = attn.values();
  std::vector<double> out(feature.size());
  for (std::size_t n = 0; n < fs[0]; ++n)
    for (std::size_t c = 0; c < fs[1]; ++c)
      for (std::size_t t = 0; t < fs[2]; ++t)
        for (std::size_t h = 0; h < fs[3]; ++h)
          for (std::size_t w = 0; w < fs[4]; ++w) {
            const std::size_t fi = flat_index(fs, n, c, t, h, w);
            const std::size_t ai = (as[0] == 1 ? 0 : n) * astr[0] + (as[1] == 1 ? 0 : c) * astr[1] +
                                   (as[2] == 1 ? 0 : t) * astr[2] + (as[3] == 1 ? 0 : h) * astr[3] +
                                   (as[4] == 1 ? 0 : w) * astr[4];
            out[fi] = fv[fi] * av[ai];
          }
  return Tensor::make_op(fs, std::move(out), {feature, attn}, [](detail::Node& self) {
    detail::Node& f = *self.parents[0];
    detail::Node& a = *self.parents[1];
    const Shape5& fs = f.shape;
    const Shape5& as = a.shape;
    const auto astr = strides_of(as);
    const bool fg = f.requires_grad;
    const bool ag = a.requires_grad;
    if (fg) f.ensure_grad();
    if (ag) a.ensure_grad();
    for (std::size_t n = 0; n < fs[0]; ++n)
      for (std::size_t c = 0; c < fs[1]; ++c)
        for (std::size_t t = 0; t < fs[2]; ++t)
          for (std::size_t h = 0; h < fs[3]; ++h)
            for (std::size_t w = 0; w < fs[4]; ++w) {
              const std::size_t fi = flat_index(fs, n, c, t, h, w);
              const std::size_t ai = (as[0] == 1 ? 0 : n) * astr[0] +
                                     (as[1] == 1 ? 0 : c) * astr[1] +
                                     (as[2] == 1 ? 0 : t) * astr[2] +
                                     (as[3] == 1 ? 0 : h) * astr[3] +
                                     (as[4] == 1 ? 0 : w) * astr[4];
              const double g = self.grad[fi];
              if (fg) f.grad[fi] += g * a.value[ai];
              if (ag) a.grad[ai] += g * f.value[fi];
            }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return Tensor::make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      x.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

// max(0, x); the subgradient at exactly 0 is taken as 0
inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return Tensor::make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x.value[i] > 0.0) x.grad[i] += self.grad[i];
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return Tensor::make_op(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * factor;
  });
}

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::make_op({1, 1, 1, 1, 1}, {acc}, {x}, [](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += g;
  });
}

inline Tensor mean_all(const Tensor& x) {
  check(x.size() > 0, "mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Reduces every axis not in keep (batch always kept) to extent 1. Avg divides
// by the reduced-element count; max keeps the maximum, routing its gradient to
// the first argmax in row-major order.
inline Tensor pool_global(const Tensor& x, PoolMode mode, std::initializer_list<Axis> keep) {
  const Shape5& xs = x.shape();
  std::array<bool, 5> kept{true, false, false, false, false};
  for (Axis a : keep) kept[static_cast<std::size_t>(a)] = true;
  Shape5 os;
  std::size_t count = 1;
  for (std::size_t d = 0; d < 5; ++d) {
    os[d] = kept[d] ? xs[d] : 1;
    if (!kept[d]) count *= xs[d];
  }
  check(count > 0, "pool_global: reduction over zero elements for shape " + shape_str(xs));

  const std::size_t osize = numel(os);
  std::vector<double> out(osize, mode == PoolMode::Avg ? 0.0 : -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? osize : 0, 0);
  const auto xv = x.values();
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t t = 0; t < xs[2]; ++t)
        for (std::size_t h = 0; h < xs[3]; ++h)
          for (std::size_t w = 0; w < xs[4]; ++w) {
            const std::size_t xi = flat_index(xs, n, c, t, h, w);
            const std::size_t oi = flat_index(os, n, kept[1] ? c : 0, kept[2] ? t : 0,
                                              kept[3] ? h : 0, kept[4] ? w : 0);
            if (mode == PoolMode::Avg) {
              out[oi] += xv[xi];
            } else if (xv[xi] > out[oi]) {
              out[oi] = xv[xi];
              argmax[oi] = xi;
            }
          }
  if (mode == PoolMode::Avg)
    for (double& v : out) v /= static_cast<double>(count);

  return Tensor::make_op(
      os, std::move(out), {x},
      [mode, kept, count, argmax = std::move(argmax)](detail::Node& self) {
        detail::Node& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        if (mode == PoolMode::Max) {
          for (std::size_t oi = 0; oi < self.grad.size(); ++oi) x.grad[argmax[oi]] += self.grad[oi];
          return;
        }
        const Shape5& xs = x.shape;
        const Shape5& os = self.shape;
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < xs[0]; ++n)
          for (std::size_t c = 0; c < xs[1]; ++c)
            for (std::size_t t = 0; t < xs[2]; ++t)
              for (std::size_t h = 0; h < xs[3]; ++h)
                for (std::size_t w = 0; w < xs[4]; ++w) {
                  const std::size_t xi = flat_index(xs, n, c, t, h, w);
                  const std::size_t oi = flat_index(os, n, kept[1] ? c : 0, kept[2] ? t : 0,
                                                    kept[3] ? h : 0, kept[4] ? w : 0);
                  x.grad[xi] += self.grad[oi] * inv;
                }
      });
}

// Average pooling over non-overlapping (ft, fh, fw) blocks of the T/H/W axes;
// extents must divide evenly. Used for backbone downsampling and for pooling
// the fast pathway's time axis down to the slow pathway's at lateral fusion.
inline Tensor pool_block_avg(const Tensor& x, const std::array<std::size_t, 3>& factors) {
  const Shape5& xs = x.shape();
  for (std::size_t d = 0; d < 3; ++d) {
    check(factors[d] >= 1, "pool_block_avg: factors must be >= 1");
    check(xs[d + 2] % factors[d] == 0, "pool_block_avg: extent " + std::to_string(xs[d + 2]) +
                                           " not divisible by factor " +
                                           std::to_string(factors[d]));
  }
  const Shape5 os{xs[0], xs[1], xs[2] / factors[0], xs[3] / factors[1], xs[4] / factors[2]};
  const double inv = 1.0 / static_cast<double>(factors[0] * factors[1] * factors[2]);
  std::vector<double> out(numel(os), 0.0);
  const auto xv = x.values();
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t t = 0; t < xs[2]; ++t)
        for (std::size_t h = 0; h < xs[3]; ++h)
          for (std::size_t w = 0; w < xs[4]; ++w)
            out[flat_index(os, n, c, t / factors[0], h / factors[1], w / factors[2])] +=
                xv[flat_index(xs, n, c, t, h, w)] * inv;
  return Tensor::make_op(os, std::move(out), {x}, [factors, inv](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    const Shape5& xs = x.shape;
    const Shape5& os = self.shape;
    for (std::size_t n = 0; n < xs[0]; ++n)
      for (std::size_t c = 0; c < xs[1]; ++c)
        for (std::size_t t = 0; t < xs[2]; ++t)
          for (std::size_t h = 0; h < xs[3]; ++h)
            for (std::size_t w = 0; w < xs[4]; ++w)
              x.grad[flat_index(xs, n, c, t, h, w)] +=
                  self.grad[flat_index(os, n, c, t / factors[0], h / factors[1], w / factors[2])] *
                  inv;
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// 3-D convolution kernel. Weights are a tensor with extents
// (out_channels, in_channels, kt, kh, kw); the optional bias has extents
// (1, out_channels, 1, 1, 1). Padding is zero padding per (T, H, W) axis.
struct Conv3dKernel {
  Tensor weight;
  std::optional<Tensor> bias;
  std::array<std::size_t, 3> padding{0, 0, 0};

  std::size_t out_channels() const { return weight.shape()[0]; }
  std::size_t in_channels() const { return weight.shape()[1]; }
};

// Cross-correlation over (T, H, W) with zero padding, stride 1. Output extent
// per axis is in + 2*pad - kernel + 1.
inline Tensor conv3d(const Tensor& x, const Conv3dKernel& k) {
  const Shape5& xs = x.shape();
  const Shape5& ws = k.weight.shape();
  check(xs[1] == ws[1], "conv3d: input channels " + std::to_string(xs[1]) +
                            " do not match kernel in_channels " + std::to_string(ws[1]));
  if (k.bias) {
    const Shape5& bs = k.bias->shape();
    check(bs == Shape5{1, ws[0], 1, 1, 1}, "conv3d: bias shape must be (1,out_channels,1,1,1)");
  }
  Shape5 os{xs[0], ws[0], 0, 0, 0};
  for (std::size_t d = 0; d < 3; ++d) {
    const long long e = static_cast<long long>(xs[d + 2]) +
                        2 * static_cast<long long>(k.padding[d]) -
                        static_cast<long long>(ws[d + 2]) + 1;
    check(e >= 1, "conv3d: kernel larger than padded input on axis " + std::to_string(d + 2));
    os[d + 2] = static_cast<std::size_t>(e);
  }

  const auto xv = x.values();
  const auto wv = k.weight.values();
  std::vector<double> out(numel(os), 0.0);
  const long long pt = static_cast<long long>(k.padding[0]);
  const long long ph = static_cast<long long>(k.padding[1]);
  const long long pw = static_cast<long long>(k.padding[2]);
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t co = 0; co < os[1]; ++co)
      for (std::size_t ot = 0; ot < os[2]; ++ot)
        for (std::size_t oh = 0; oh < os[3]; ++oh)
          for (std::size_t ow = 0; ow < os[4]; ++ow) {
            double acc = k.bias ? k.bias->values()[co] : 0.0;
            for (std::size_t ci = 0; ci < ws[1]; ++ci)
              for (std::size_t kt = 0; kt < ws[2]; ++kt) {
                const long long it = static_cast<long long>(ot + kt) - pt;
                if (it < 0 || it >= static_cast<long long>(xs[2])) continue;
                for (std::size_t kh = 0; kh < ws[3]; ++kh) {
                  const long long ih = static_cast<long long>(oh + kh) - ph;
                  if (ih < 0 || ih >= static_cast<long long>(xs[3])) continue;
                  for (std::size_t kw = 0; kw < ws[4]; ++kw) {
                    const long long iw = static_cast<long long>(ow + kw) - pw;
                    if (iw < 0 || iw >= static_cast<long long>(xs[4])) continue;
                    acc += xv[flat_index(xs, n, ci, static_cast<std::size_t>(it),
                                         static_cast<std::size_t>(ih),
                                         static_cast<std::size_t>(iw))] *
                           wv[flat_index(ws, co, ci, kt, kh, kw)];
                  }
                }
              }
            out[flat_index(os, n, co, ot, oh, ow)] = acc;
          }

  std::vector<Tensor> parents{x, k.weight};
  if (k.bias) parents.push_back(*k.bias);
  const auto padding = k.padding;
  const bool has_bias = k.bias.has_value();
  return Tensor::make_op(os, std::move(out), std::move(parents), [padding, has_bias](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    detail::Node& w = *self.parents[1];
    const Shape5& xs = x.shape;
    const Shape5& ws = w.shape;
    const Shape5& os = self.shape;
    const bool xg = x.requires_grad;
    const bool wg = w.requires_grad;
    if (xg) x.ensure_grad();
    if (wg) w.ensure_grad();
    const long long pt = static_cast<long long>(padding[0]);
    const long long ph = static_cast<long long>(padding[1]);
    const long long pw = static_cast<long long>(padding[2]);
    if (xg || wg) {
      for (std::size_t n = 0; n < os[0]; ++n)
        for (std::size_t co = 0; co < os[1]; ++co)
          for (std::size_t ot = 0; ot < os[2]; ++ot)
            for (std::size_t oh = 0; oh < os[3]; ++oh)
              for (std::size_t ow = 0; ow < os[4]; ++ow) {
                const double g = self.grad[flat_index(os, n, co, ot, oh, ow)];
                if (g == 0.0) continue;
                for (std::size_t ci = 0; ci < ws[1]; ++ci)
                  for (std::size_t kt = 0; kt < ws[2]; ++kt) {
                    const long long it = static_cast<long long>(ot + kt) - pt;
                    if (it < 0 || it >= static_cast<long long>(xs[2])) continue;
                    for (std::size_t kh = 0; kh < ws[3]; ++kh) {
                      const long long ih = static_cast<long long>(oh + kh) - ph;
                      if (ih < 0 || ih >= static_cast<long long>(xs[3])) continue;
                      for (std::size_t kw = 0; kw < ws[4]; ++kw) {
                        const long long iw = static_cast<long long>(ow + kw) - pw;
                        if (iw < 0 || iw >= static_cast<long long>(xs[4])) continue;
                        const std::size_t xi =
                            flat_index(xs, n, ci, static_cast<std::size_t>(it),
                                       static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
                        const std::size_t wi = flat_index(ws, co, ci, kt, kh, kw);
                        if (xg) x.grad[xi] += g * w.value[wi];
                        if (wg) w.grad[wi] += g * x.value[xi];
                      }
                    }
                  }
              }
    }
    if (has_bias) {
      detail::Node& b = *self.parents[2];
      if (!b.requires_grad) return;
      b.ensure_grad();
      for (std::size_t n = 0; n < os[0]; ++n)
        for (std::size_t co = 0; co < os[1]; ++co)
          for (std::size_t ot = 0; ot < os[2]; ++ot)
            for (std::size_t oh = 0; oh < os[3]; ++oh)
              for (std::size_t ow = 0; ow < os[4]; ++ow)
                b.grad[co] += self.grad[flat_index(os, n, co, ot, oh, ow)];
    }
  });
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

// Channel concatenation; a occupies the leading channels.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape5& as = a.shape();
  const Shape5& bs = b.shape();
  for (std::size_t d = 0; d < 5; ++d)
    if (d != 1)
      check(as[d] == bs[d], "concat_channels: non-channel extent mismatch on axis " +
                                std::to_string(d) + ": " + shape_str(as) + " vs " + shape_str(bs));
  const Shape5 os{as[0], as[1] + bs[1], as[2], as[3], as[4]};
  std::vector<double> out(numel(os));
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t c = 0; c < os[1]; ++c)
      for (std::size_t t = 0; t < os[2]; ++t)
        for (std::size_t h = 0; h < os[3]; ++h)
          for (std::size_t w = 0; w < os[4]; ++w)
            out[flat_index(os, n, c, t, h, w)] =
                c < as[1] ? av[flat_index(as, n, c, t, h, w)]
                          : bv[flat_index(bs, n, c - as[1], t, h, w)];
  return Tensor::make_op(os, std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& a = *self.parents[0];
    detail::Node& b = *self.parents[1];
    const Shape5& os = self.shape;
    const std::size_t ac = a.shape[1];
    if (a.requires_grad) a.ensure_grad();
    if (b.requires_grad) b.ensure_grad();
    for (std::size_t n = 0; n < os[0]; ++n)
      for (std::size_t c = 0; c < os[1]; ++c)
        for (std::size_t t = 0; t < os[2]; ++t)
          for (std::size_t h = 0; h < os[3]; ++h)
            for (std::size_t w = 0; w < os[4]; ++w) {
              const double g = self.grad[flat_index(os, n, c, t, h, w)];
              if (c < ac) {
                if (a.requires_grad) a.grad[flat_index(a.shape, n, c, t, h, w)] += g;
              } else if (b.requires_grad) {
                b.grad[flat_index(b.shape, n, c - ac, t, h, w)] += g;
              }
            }
  });
}

// Swaps the channel and time axes: (N,C,T,H,W) -> (N,T,C,H,W). Lets 1x1x1
// convolutions squeeze/excite the time dimension by treating it as channels.
inline Tensor transpose_ct(const Tensor& x) {
  const Shape5& xs = x.shape();
  const Shape5 os{xs[0], xs[2], xs[1], xs[3], xs[4]};
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t t = 0; t < xs[2]; ++t)
        for (std::size_t h = 0; h < xs[3]; ++h)
          for (std::size_t w = 0; w < xs[4]; ++w)
            out[flat_index(os, n, t, c, h, w)] = xv[flat_index(xs, n, c, t, h, w)];
  return Tensor::make_op(os, std::move(out), {x}, [](detail::Node& self) {
    detail::Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    const Shape5& xs = x.shape;
    const Shape5& os = self.shape;
    for (std::size_t n = 0; n < xs[0]; ++n)
      for (std::size_t c = 0; c < xs[1]; ++c)
        for (std::size_t t = 0; t < xs[2]; ++t)
          for (std::size_t h = 0; h < xs[3]; ++h)
            for (std::size_t w = 0; w < xs[4]; ++w)
              x.grad[flat_index(xs, n, c, t, h, w)] += self.grad[flat_index(os, n, t, c, h, w)];
  });
}

// Rectangular region of one batch sample in feature-map pixel coordinates;
// half-open bounds [x1,x2) x [y1,y2).
struct PixelRegion {
  std::size_t sample;
  std::size_t x1, y1, x2, y2;
};

// Per-region channel descriptor: averages f over the full time extent and the
// region's spatial window, producing one (1,C,1,1,1) row per region stacked
// along the batch axis.
inline Tensor pool_regions(const Tensor& f, const std::vector<PixelRegion>& regions) {
  const Shape5& fs = f.shape();
  check(fs[2] > 0, "pool_regions: zero time extent");
  for (const PixelRegion& r : regions) {
    check(r.sample < fs[0], "pool_regions: sample index out of range");
    check(r.x1 < r.x2 && r.x2 <= fs[4] && r.y1 < r.y2 && r.y2 <= fs[3],
          "pool_regions: empty or out-of-range region");
  }
  const Shape5 os{regions.size(), fs[1], 1, 1, 1};
  std::vector<double> out(numel(os), 0.0);
  const auto fv = f.values();
  for (std::size_t b = 0; b < regions.size(); ++b) {
    const PixelRegion& r = regions[b];
    const double inv = 1.0 / static_cast<double>(fs[2] * (r.y2 - r.y1) * (r.x2 - r.x1));
    for (std::size_t c = 0; c < fs[1]; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < fs[2]; ++t)
        for (std::size_t h = r.y1; h < r.y2; ++h)
          for (std::size_t w = r.x1; w < r.x2; ++w) acc += fv[flat_index(fs, r.sample, c, t, h, w)];
      out[flat_index(os, b, c, 0, 0, 0)] = acc * inv;
    }
  }
  return Tensor::make_op(os, std::move(out), {f}, [regions](detail::Node& self) {
    detail::Node& f = *self.parents[0];
    if (!f.requires_grad) return;
    f.ensure_grad();
    const Shape5& fs = f.shape;
    const Shape5& os = self.shape;
    for (std::size_t b = 0; b < regions.size(); ++b) {
      const PixelRegion& r = regions[b];
      const double inv = 1.0 / static_cast<double>(fs[2] * (r.y2 - r.y1) * (r.x2 - r.x1));
      for (std::size_t c = 0; c < fs[1]; ++c) {
        const double g = self.grad[flat_index(os, b, c, 0, 0, 0)] * inv;
        for (std::size_t t = 0; t < fs[2]; ++t)
          for (std::size_t h = r.y1; h < r.y2; ++h)
            for (std::size_t w = r.x1; w < r.x2; ++w)
              f.grad[flat_index(fs, r.sample, c, t, h, w)] += g;
      }
    }
  });
}

}  // namespace tcs3d
