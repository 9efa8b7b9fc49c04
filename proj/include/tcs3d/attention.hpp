#pragma once

// Serial temporal -> channel -> spatial attention over 5-D video feature
// maps. Each module aggregates the other dimensions with global average and
// max pooling, squeezes and excites (or convolves) the kept dimension, and
// gates the feature map through a sigmoid multiply.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tcs3d/rng.hpp"
#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

// Bottleneck MLP realized as two 1x1x1 convolutions (dim -> dim/ratio -> dim)
// with a relu between squeeze and excitation. One parameter set is shared by
// the average-pooled and max-pooled branches.
struct SqueezeExcite {
  Conv3dKernel squeeze;  // dim -> dim/ratio
  Conv3dKernel excite;   // dim/ratio -> dim
  std::size_t ratio = 0;
};

struct AttentionParams {
  SqueezeExcite tam;  // acts on the time axis (transposed into the channel slot)
  SqueezeExcite cam;  // acts on the channel axis
  Conv3dKernel sam;   // 2 -> 1 channels, 3x3x3, padding (1,1,1)
};

// The three attention maps and intermediate feature maps produced by one
// tcs3d_forward pass, in application order.
struct AttentionTrace {
  Tensor m_t, m_c, m_s;  // (N,1,T,1,1), (N,C,1,1,1), (N,1,1,H,W)
  Tensor f1, f2, f3;     // after temporal, channel, spatial gating
};

namespace detail_attention {

inline Conv3dKernel init_kernel(std::size_t out_ch, std::size_t in_ch, std::size_t kt,
                                std::size_t kh, std::size_t kw,
                                const std::array<std::size_t, 3>& padding, Rng& rng) {
  const std::size_t fan_in = in_ch * kt * kh * kw;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(out_ch * in_ch * kt * kh * kw);
  for (double& v : w) v = rng.uniform(-bound, bound);
  Conv3dKernel k;
  k.weight = Tensor::from_values({out_ch, in_ch, kt, kh, kw}, std::move(w), true);
  k.bias = Tensor::full({1, out_ch, 1, 1, 1}, 0.0, true);
  k.padding = padding;
  return k;
}

inline SqueezeExcite init_squeeze_excite(std::size_t dim, std::size_t ratio, Rng& rng) {
  check(ratio >= 1, "squeeze ratio must be >= 1");
  check(dim % ratio == 0, "squeeze-excite dimension " + std::to_string(dim) +
                              " not divisible by ratio " + std::to_string(ratio));
  SqueezeExcite se;
  se.squeeze = init_kernel(dim / ratio, dim, 1, 1, 1, {0, 0, 0}, rng);
  se.excite = init_kernel(dim, dim / ratio, 1, 1, 1, {0, 0, 0}, rng);
  se.ratio = ratio;
  return se;
}

// shared-MLP branch: excite(relu(squeeze(x)))
inline Tensor mlp(const Tensor& x, const SqueezeExcite& se) {
  return conv3d(relu(conv3d(x, se.squeeze)), se.excite);
}

}  // namespace detail_attention

// Deterministic pseudo-random initialization, uniform in +-1/sqrt(fan_in),
// biases zero. channels/time are the feature-map extents the module will see.
inline AttentionParams make_attention_params(std::size_t channels, std::size_t time,
                                             std::size_t ratio_t = 8, std::size_t ratio_c = 16,
                                             std::uint64_t seed = 0) {
  using namespace detail_attention;
  Rng rng(mix_seed(seed, 0xa77));
  AttentionParams p;
  p.tam = init_squeeze_excite(time, ratio_t, rng);
  p.cam = init_squeeze_excite(channels, ratio_c, rng);
  p.sam = init_kernel(1, 2, 3, 3, 3, {1, 1, 1}, rng);
  return p;
}

// Temporal attention map (N,1,T,1,1): aggregate channel and spatial
// information per time step, squeeze and excite the time dimension, take the
// sigmoid of the summed branches.
inline Tensor tam_forward(const Tensor& f, const AttentionParams& p) {
  check(f.shape()[2] % p.tam.ratio == 0, "tam_forward: time extent " +
                                             std::to_string(f.shape()[2]) +
                                             " not divisible by squeeze ratio " +
                                             std::to_string(p.tam.ratio));
  check(p.tam.squeeze.in_channels() == f.shape()[2],
        "tam_forward: params built for T=" + std::to_string(p.tam.squeeze.in_channels()));
  const Tensor avg = transpose_ct(pool_global(f, PoolMode::Avg, {Axis::T}));
  const Tensor max = transpose_ct(pool_global(f, PoolMode::Max, {Axis::T}));
  const Tensor sum =
      ewise_add(detail_attention::mlp(avg, p.tam), detail_attention::mlp(max, p.tam));
  return sigmoid(transpose_ct(sum));
}

// Channel attention map (N,C,1,1,1): aggregate temporal and spatial
// information per channel, squeeze and excite the channel dimension.
inline Tensor cam_forward(const Tensor& f, const AttentionParams& p) {
  check(f.shape()[1] % p.cam.ratio == 0, "cam_forward: channel extent " +
                                             std::to_string(f.shape()[1]) +
                                             " not divisible by squeeze ratio " +
                                             std::to_string(p.cam.ratio));
  check(p.cam.squeeze.in_channels() == f.shape()[1],
        "cam_forward: params built for C=" + std::to_string(p.cam.squeeze.in_channels()));
  const Tensor avg = pool_global(f, PoolMode::Avg, {Axis::C});
  const Tensor max = pool_global(f, PoolMode::Max, {Axis::C});
  return sigmoid(ewise_add(detail_attention::mlp(avg, p.cam), detail_attention::mlp(max, p.cam)));
}

// Spatial attention map (N,1,1,H,W): pool channels and time away, splice the
// two pooled maps along the channel axis, convolve down to a single channel.
inline Tensor sam_forward(const Tensor& f, const AttentionParams& p) {
  const Tensor avg = pool_global(f, PoolMode::Avg, {Axis::H, Axis::W});
  const Tensor max = pool_global(f, PoolMode::Max, {Axis::H, Axis::W});
  return sigmoid(conv3d(concat_channels(avg, max), p.sam));
}

// Full stack: F1 = M_t(F)*F, F2 = M_c(F1)*F1, F3 = M_s(F2)*F2. Output shape
// equals input shape; the trace carries the maps and intermediates.
inline std::pair<Tensor, AttentionTrace> tcs3d_forward(const Tensor& f,
                                                       const AttentionParams& p) {
  AttentionTrace trace;
  trace.m_t = tam_forward(f, p);
  trace.f1 = broadcast_mul(f, trace.m_t);
  trace.m_c = cam_forward(trace.f1, p);
  trace.f2 = broadcast_mul(trace.f1, trace.m_c);
  trace.m_s = sam_forward(trace.f2, p);
  trace.f3 = broadcast_mul(trace.f2, trace.m_s);
  return {trace.f3, trace};
}

// Checkpoint layout for the attention parameters.
inline NamedTensors attention_named_tensors(const AttentionParams& p,
                                            const std::string& prefix = "") {
  NamedTensors out;
  auto push_kernel = [&](const std::string& name, const Conv3dKernel& k) {
    out.emplace_back(prefix + name, k.weight);
    if (k.bias) out.emplace_back(prefix + name + ".bias", *k.bias);
  };
  push_kernel("tam.w0", p.tam.squeeze);
  push_kernel("tam.w1", p.tam.excite);
  push_kernel("cam.w0", p.cam.squeeze);
  push_kernel("cam.w1", p.cam.excite);
  push_kernel("sam.conv", p.sam);
  return out;
}

}  // namespace tcs3d
