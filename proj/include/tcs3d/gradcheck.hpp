#pragma once

// Central finite-difference verification of reverse-mode gradients. The
// checker perturbs leaf values and re-runs the forward pass, so it is
// independent of every backward implementation it validates. Random inputs
// are drawn in [-2, 2] and nudged at least 1e-3 away from relu / max-pool
// kinks where those ops see leaf values directly.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tcs3d/attention.hpp"
#include "tcs3d/backbone.hpp"
#include "tcs3d/loss.hpp"
#include "tcs3d/model.hpp"
#include "tcs3d/rng.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

struct OpCheck {
  std::string name;
  double max_rel_err = 0.0;
};

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTol = 1e-4;

namespace detail_gradcheck {

inline double rel_err(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  if (m < 1e-12) return 0.0;
  return std::abs(a - b) / m;
}

// leaf values in [-2,2] kept at least `margin` from zero (relu kink) and,
// pairwise within the tensor, at least `margin` apart (max-pool ties)
inline std::vector<double> kink_safe_values(std::size_t count, Rng& rng, double margin = 1e-3) {
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x = rng.uniform(-2.0, 2.0);
    if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
    // separate from earlier samples so max-pool argmaxes stay stable
    bool clash = true;
    while (clash) {
      clash = false;
      for (std::size_t j = 0; j < i; ++j)
        if (std::abs(v[j] - x) < margin) {
          x += 3.1 * margin;
          clash = true;
          break;
        }
    }
    v[i] = x;
  }
  return v;
}

}  // namespace detail_gradcheck

// Compares backward() gradients of f(leaves) against central finite
// differences over every scalar in every leaf. f must build a fresh graph on
// each call and return a scalar.
inline double max_grad_rel_err(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               std::vector<Tensor> leaves, double eps = kGradCheckEps) {
  for (Tensor& leaf : leaves) {
    check(leaf.is_leaf(), "max_grad_rel_err: inputs must be leaf tensors");
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor root = f(leaves);
  check(root.size() == 1, "max_grad_rel_err: f must return a scalar");
  backward(root);

  double worst = 0.0;
  for (Tensor& leaf : leaves) {
    // a leaf the graph never reached has gradient exactly zero
    const std::vector<double> zeros(leaf.has_grad() ? 0 : leaf.size(), 0.0);
    const auto analytic = leaf.has_grad() ? leaf.grad() : std::span<const double>(zeros);
    auto vals = leaf.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = f(leaves).values()[0];
      vals[i] = saved - eps;
      const double down = f(leaves).values()[0];
      vals[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, detail_gradcheck::rel_err(analytic[i], fd));
    }
  }
  return worst;
}

namespace detail_gradcheck {

// scalar root that mixes all elements with fixed pseudo-random weights, so
// symmetric gradient errors cannot cancel
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x3e1));
  std::vector<double> w(x.size());
  for (double& v : w) v = rng.uniform(0.25, 1.75);
  return sum_all(broadcast_mul(x, Tensor::from_values(x.shape(), std::move(w))));
}

inline Tensor leaf(const Shape5& shape, Rng& rng) {
  return Tensor::from_values(shape, kink_safe_values(numel(shape), rng));
}

}  // namespace detail_gradcheck

// ---------------------------------------------------------------------------
// per-module suites
// ---------------------------------------------------------------------------

inline std::vector<OpCheck> gradcheck_tensor(std::uint64_t seed) {
  using namespace detail_gradcheck;
  Rng rng(mix_seed(seed, 0x7e0));
  std::vector<OpCheck> checks;
  const Shape5 shape{1, 2, 4, 3, 3};

  checks.push_back({"ewise_add", max_grad_rel_err(
                                     [&](const std::vector<Tensor>& in) {
                                       return weighted_sum(ewise_add(in[0], in[1]), seed);
                                     },
                                     {leaf(shape, rng), leaf(shape, rng)})});
  checks.push_back({"broadcast_mul", max_grad_rel_err(
                                         [&](const std::vector<Tensor>& in) {
                                           return weighted_sum(broadcast_mul(in[0], in[1]), seed);
                                         },
                                         {leaf(shape, rng), leaf({1, 1, 4, 1, 1}, rng)})});
  checks.push_back({"sigmoid", max_grad_rel_err(
                                   [&](const std::vector<Tensor>& in) {
                                     return weighted_sum(sigmoid(in[0]), seed);
                                   },
                                   {leaf(shape, rng)})});
  checks.push_back({"relu", max_grad_rel_err(
                                [&](const std::vector<Tensor>& in) {
                                  return weighted_sum(relu(in[0]), seed);
                                },
                                {leaf(shape, rng)})});
  checks.push_back({"pool_global_avg",
                    max_grad_rel_err(
                        [&](const std::vector<Tensor>& in) {
                          return weighted_sum(pool_global(in[0], PoolMode::Avg, {Axis::T}), seed);
                        },
                        {leaf(shape, rng)})});
  checks.push_back({"pool_global_max",
                    max_grad_rel_err(
                        [&](const std::vector<Tensor>& in) {
                          return weighted_sum(
                              pool_global(in[0], PoolMode::Max, {Axis::H, Axis::W}), seed);
                        },
                        {leaf(shape, rng)})});
  checks.push_back({"pool_block_avg",
                    max_grad_rel_err(
                        [&](const std::vector<Tensor>& in) {
                          return weighted_sum(pool_block_avg(in[0], {2, 1, 1}), seed);
                        },
                        {leaf(shape, rng)})});
  checks.push_back(
      {"conv3d", max_grad_rel_err(
                     [&](const std::vector<Tensor>& in) {
                       Conv3dKernel k{in[1], in[2], {1, 1, 1}};
                       return weighted_sum(conv3d(in[0], k), seed);
                     },
                     {leaf(shape, rng), leaf({3, 2, 3, 3, 3}, rng), leaf({1, 3, 1, 1, 1}, rng)})});
  checks.push_back({"concat_channels", max_grad_rel_err(
                                           [&](const std::vector<Tensor>& in) {
                                             return weighted_sum(concat_channels(in[0], in[1]),
                                                                 seed);
                                           },
                                           {leaf(shape, rng), leaf({1, 3, 4, 3, 3}, rng)})});
  checks.push_back({"transpose_ct", max_grad_rel_err(
                                        [&](const std::vector<Tensor>& in) {
                                          return weighted_sum(transpose_ct(in[0]), seed);
                                        },
                                        {leaf(shape, rng)})});
  checks.push_back(
      {"pool_regions", max_grad_rel_err(
                           [&](const std::vector<Tensor>& in) {
                             const std::vector<PixelRegion> regions{{0, 0, 0, 2, 3}, {0, 1, 1, 3, 3}};
                             return weighted_sum(pool_regions(in[0], regions), seed);
                           },
                           {leaf(shape, rng)})});
  return checks;
}

inline std::vector<OpCheck> gradcheck_attention(std::uint64_t seed) {
  using namespace detail_gradcheck;
  Rng rng(mix_seed(seed, 0x7e1));
  std::vector<OpCheck> checks;
  const std::size_t C = 4, T = 4;
  const Shape5 shape{1, C, T, 3, 3};
  const AttentionParams params = make_attention_params(C, T, 2, 2, seed);

  // one leaf per parameter tensor plus the input; rebuild params around the
  // leaves every call
  auto collect = [&](const Tensor& input) {
    std::vector<Tensor> leaves{input};
    for (auto& [name, t] : attention_named_tensors(params)) leaves.push_back(t);
    return leaves;
  };
  auto rebuild = [](const std::vector<Tensor>& in, std::size_t ratio_t, std::size_t ratio_c) {
    AttentionParams p;
    p.tam.squeeze = {in[1], in[2], {0, 0, 0}};
    p.tam.excite = {in[3], in[4], {0, 0, 0}};
    p.tam.ratio = ratio_t;
    p.cam.squeeze = {in[5], in[6], {0, 0, 0}};
    p.cam.excite = {in[7], in[8], {0, 0, 0}};
    p.cam.ratio = ratio_c;
    p.sam = {in[9], in[10], {1, 1, 1}};
    return p;
  };

  checks.push_back({"tam_forward", max_grad_rel_err(
                                       [&](const std::vector<Tensor>& in) {
                                         return weighted_sum(tam_forward(in[0], rebuild(in, 2, 2)),
                                                             seed);
                                       },
                                       collect(leaf(shape, rng)))});
  checks.push_back({"cam_forward", max_grad_rel_err(
                                       [&](const std::vector<Tensor>& in) {
                                         return weighted_sum(cam_forward(in[0], rebuild(in, 2, 2)),
                                                             seed);
                                       },
                                       collect(leaf(shape, rng)))});
  checks.push_back({"sam_forward", max_grad_rel_err(
                                       [&](const std::vector<Tensor>& in) {
                                         return weighted_sum(sam_forward(in[0], rebuild(in, 2, 2)),
                                                             seed);
                                       },
                                       collect(leaf(shape, rng)))});
  checks.push_back({"tcs3d_forward",
                    max_grad_rel_err(
                        [&](const std::vector<Tensor>& in) {
                          auto [out, trace] = tcs3d_forward(in[0], rebuild(in, 2, 2));
                          return weighted_sum(out, seed);
                        },
                        collect(leaf(shape, rng)))});
  return checks;
}

inline std::vector<OpCheck> gradcheck_loss(std::uint64_t seed) {
  using namespace detail_gradcheck;
  Rng rng(mix_seed(seed, 0x7e2));
  std::vector<OpCheck> checks;
  const Shape5 shape{3, 8, 1, 1, 1};

  auto probs_leaf = [&]() {
    std::vector<double> v(numel(shape));
    for (double& p : v) p = rng.uniform(0.05, 0.95);
    return Tensor::from_values(shape, std::move(v));
  };
  auto targets = [&]() {
    std::vector<double> v(numel(shape));
    for (double& y : v) y = rng.bernoulli(0.4) ? 1.0 : 0.0;
    return Tensor::from_values(shape, std::move(v));
  };

  const Tensor y = targets();
  checks.push_back({"bce", max_grad_rel_err(
                               [&](const std::vector<Tensor>& in) {
                                 return bce(LabelBatch{in[0], y});
                               },
                               {probs_leaf()})});
  for (double gamma : {0.0, 0.5, 2.0, 5.0}) {
    const FocalParams fp{0.3, gamma, 1e-7};
    checks.push_back({"fbce_gamma_" + std::to_string(gamma).substr(0, 3),
                      max_grad_rel_err(
                          [&](const std::vector<Tensor>& in) {
                            return fbce(LabelBatch{in[0], y}, fp);
                          },
                          {probs_leaf()})});
  }
  // through the sigmoid, as the training loop composes them
  checks.push_back({"sigmoid_fbce", max_grad_rel_err(
                                        [&](const std::vector<Tensor>& in) {
                                          return fbce(LabelBatch{sigmoid(in[0]), y},
                                                      FocalParams{0.5, 2.0, 1e-7});
                                        },
                                        {leaf(shape, rng)})});
  return checks;
}

inline std::vector<OpCheck> gradcheck_backbone(std::uint64_t seed) {
  using namespace detail_gradcheck;
  Rng rng(mix_seed(seed, 0x7e3));
  std::vector<OpCheck> checks;

  ModelConfig cfg;
  cfg.backbone.tau = 4;
  cfg.backbone.alpha = 2;
  cfg.backbone.beta = 0.25;
  cfg.backbone.in_channels = 2;
  cfg.backbone.stages = {{4, {1, 2, 2}}};
  cfg.t_raw = 8;
  cfg.ratio_t = 2;
  cfg.ratio_c = 1;
  cfg.num_classes = 3;
  const Model model = make_model(cfg, seed);

  auto collect = [&](const Tensor& input) {
    std::vector<Tensor> leaves{input};
    for (auto& [name, t] : model_named_tensors(model)) leaves.push_back(t);
    return leaves;
  };
  auto rebuild = [&](const std::vector<Tensor>& in) {
    Model m = model;  // copies config and parameter handles
    // order matches collect(): rebuild kernels from the leaf list
    std::size_t i = 1;
    for (auto& conv : m.backbone.slow.convs) {
      conv.weight = in[i++];
      conv.bias = in[i++];
    }
    for (auto& conv : m.backbone.fast.convs) {
      conv.weight = in[i++];
      conv.bias = in[i++];
    }
    m.attn.tam.squeeze.weight = in[i++];
    m.attn.tam.squeeze.bias = in[i++];
    m.attn.tam.excite.weight = in[i++];
    m.attn.tam.excite.bias = in[i++];
    m.attn.cam.squeeze.weight = in[i++];
    m.attn.cam.squeeze.bias = in[i++];
    m.attn.cam.excite.weight = in[i++];
    m.attn.cam.excite.bias = in[i++];
    m.attn.sam.weight = in[i++];
    m.attn.sam.bias = in[i++];
    m.head.weight = in[i++];
    m.head.bias = in[i++];
    check(i == in.size(), "gradcheck_backbone: leaf count mismatch");
    return m;
  };

  const Shape5 clip_shape{1, 2, 8, 6, 6};
  std::vector<double> frames(numel(clip_shape));
  for (double& v : frames) v = rng.uniform(0.0, 1.0);
  const std::vector<std::vector<Box>> boxes{{Box{0.1, 0.1, 0.6, 0.7}, Box{0.4, 0.3, 0.95, 0.9}}};
  const Tensor targets = Tensor::from_values({2, 3, 1, 1, 1}, {1, 0, 0, 0, 1, 1});

  checks.push_back(
      {"extract_features", max_grad_rel_err(
                               [&](const std::vector<Tensor>& in) {
                                 const Model m = rebuild(in);
                                 ClipBatch batch{in[0], {{}}};
                                 return weighted_sum(
                                     extract_features(batch, m.cfg.backbone, m.backbone), seed);
                               },
                               collect(Tensor::from_values(clip_shape, frames)))});
  checks.push_back({"classify_regions",
                    max_grad_rel_err(
                        [&](const std::vector<Tensor>& in) {
                          const Model m = rebuild(in);
                          ClipBatch batch{in[0], boxes};
                          return weighted_sum(model_logits(m, batch), seed);
                        },
                        collect(Tensor::from_values(clip_shape, frames)))});
  checks.push_back({"model_loss", max_grad_rel_err(
                                      [&](const std::vector<Tensor>& in) {
                                        const Model m = rebuild(in);
                                        ClipBatch batch{in[0], boxes};
                                        const Tensor probs = sigmoid(model_logits(m, batch));
                                        return fbce(LabelBatch{probs, targets},
                                                    FocalParams{0.5, 2.0, 1e-7});
                                      },
                                      collect(Tensor::from_values(clip_shape, frames)))});
  return checks;
}

// Negative control: an op whose declared gradient is wrong by 1e-2. The
// checker must report an error above tolerance, proving it can catch a broken
// backward.
inline OpCheck gradcheck_negative_control(std::uint64_t seed) {
  using namespace detail_gradcheck;
  Rng rng(mix_seed(seed, 0x7e4));
  auto corrupted_sigmoid = [](const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    return Tensor::make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
      detail::Node& x = *self.parents[0];
      if (!x.requires_grad) return;
      x.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        x.grad[i] += self.grad[i] * (y * (1.0 - y) + 1e-2);
      }
    });
  };
  return {"corrupted_gradient_control",
          max_grad_rel_err(
              [&](const std::vector<Tensor>& in) {
                return weighted_sum(corrupted_sigmoid(in[0]), seed);
              },
              {leaf({1, 2, 2, 2, 2}, rng)})};
}

}  // namespace tcs3d
