#pragma once

// Miniature dual-pathway feature extractor. The slow pathway samples every
// tau-th frame and carries the full channel budget; the fast pathway samples
// alpha times as densely with beta times the channels. Both run a small conv
// stack, then the fast features are time-pooled down to the slow time extent
// and channel-concatenated (one lateral fusion), producing the feature map
// the attention stack consumes. A per-region head crops that map to each box
// and maps the pooled descriptor to multi-label class logits.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tcs3d/box.hpp"
#include "tcs3d/rng.hpp"
#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

struct StageSpec {
  std::size_t out_channels = 8;              // slow-path channels after this stage
  std::array<std::size_t, 3> pool{1, 2, 2};  // block-average factors (T,H,W)
};

struct BackboneConfig {
  std::size_t tau = 16;   // slow-path frame stride
  std::size_t alpha = 8;  // fast/slow frame-rate ratio
  double beta = 0.125;    // fast/slow channel ratio
  std::size_t in_channels = 3;
  std::vector<StageSpec> stages{{4, {1, 2, 2}}, {8, {1, 2, 2}}};

  std::size_t fast_channels(std::size_t slow_channels) const {
    const auto f = static_cast<std::size_t>(std::llround(beta * static_cast<double>(slow_channels)));
    return f < 1 ? 1 : f;
  }

  std::size_t fused_channels() const {
    check(!stages.empty(), "BackboneConfig: at least one stage required");
    const std::size_t slow = stages.back().out_channels;
    return slow + fast_channels(slow);
  }
};

inline void check_backbone_config(const BackboneConfig& cfg) {
  check(cfg.tau >= 1 && cfg.alpha >= 1, "BackboneConfig: tau and alpha must be >= 1");
  check(cfg.tau % cfg.alpha == 0, "BackboneConfig: tau must be divisible by alpha");
  check(cfg.beta > 0.0 && cfg.beta <= 1.0, "BackboneConfig: beta must lie in (0,1]");
  check(!cfg.stages.empty(), "BackboneConfig: at least one stage required");
}

// A batch of raw clips plus per-sample region rectangles in normalized
// coordinates.
struct ClipBatch {
  Tensor frames;                       // (N, C, T_raw, H, W)
  std::vector<std::vector<Box>> boxes;  // per sample
};

inline void check_clip_batch(const ClipBatch& clip, const BackboneConfig& cfg) {
  check(clip.frames.defined(), "ClipBatch: undefined frames");
  const Shape5& s = clip.frames.shape();
  check(s[1] == cfg.in_channels, "ClipBatch: expected " + std::to_string(cfg.in_channels) +
                                     " input channels, got " + std::to_string(s[1]));
  check(s[2] >= cfg.tau, "ClipBatch: raw time extent " + std::to_string(s[2]) +
                             " shorter than tau=" + std::to_string(cfg.tau));
  check(s[2] % cfg.tau == 0, "ClipBatch: raw time extent " + std::to_string(s[2]) +
                                 " not divisible by tau=" + std::to_string(cfg.tau));
  check(clip.boxes.size() == s[0], "ClipBatch: box lists must match the batch extent");
  for (const auto& sample : clip.boxes)
    for (const Box& b : sample) check_box_normalized(b, "ClipBatch box");
}

struct PathwayParams {
  std::vector<Conv3dKernel> convs;  // one 3x3x3 conv per stage, padding (1,1,1)
};

struct BackboneParams {
  PathwayParams slow, fast;
};

inline BackboneParams make_backbone_params(const BackboneConfig& cfg, std::uint64_t seed = 0) {
  check_backbone_config(cfg);
  Rng rng(mix_seed(seed, 0xbb));
  auto make_path = [&](bool fast) {
    PathwayParams path;
    std::size_t in_ch = cfg.in_channels;
    for (const StageSpec& st : cfg.stages) {
      const std::size_t out_ch = fast ? cfg.fast_channels(st.out_channels) : st.out_channels;
      const std::size_t fan_in = in_ch * 27;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::vector<double> w(out_ch * in_ch * 27);
      for (double& v : w) v = rng.uniform(-bound, bound);
      Conv3dKernel k;
      k.weight = Tensor::from_values({out_ch, in_ch, 3, 3, 3}, std::move(w), true);
      k.bias = Tensor::full({1, out_ch, 1, 1, 1}, 0.0, true);
      k.padding = {1, 1, 1};
      path.convs.push_back(std::move(k));
      in_ch = out_ch;
    }
    return path;
  };
  BackboneParams p;
  p.slow = make_path(false);
  p.fast = make_path(true);
  return p;
}

// Strided frame sampling: slow takes every tau-th frame, fast every
// (tau/alpha)-th, both starting at frame 0.
inline std::pair<Tensor, Tensor> sample_pathways(const ClipBatch& clip,
                                                 const BackboneConfig& cfg) {
  check_clip_batch(clip, cfg);
  const Shape5& s = clip.frames.shape();
  auto take = [&](std::size_t stride) {
    const std::size_t t_out = s[2] / stride;
    const Shape5 os{s[0], s[1], t_out, s[3], s[4]};
    std::vector<double> out(numel(os));
    const auto v = clip.frames.values();
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t c = 0; c < s[1]; ++c)
        for (std::size_t t = 0; t < t_out; ++t)
          for (std::size_t h = 0; h < s[3]; ++h)
            for (std::size_t w = 0; w < s[4]; ++w)
              out[flat_index(os, n, c, t, h, w)] =
                  v[flat_index(s, n, c, t * stride, h, w)];
    return Tensor::from_values(os, std::move(out));
  };
  return {take(cfg.tau), take(cfg.tau / cfg.alpha)};
}

namespace detail_backbone {

inline Tensor run_pathway(const Tensor& frames, const PathwayParams& path,
                          const BackboneConfig& cfg) {
  Tensor x = frames;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    x = relu(conv3d(x, path.convs[i]));
    x = pool_block_avg(x, cfg.stages[i].pool);
  }
  return x;
}

}  // namespace detail_backbone

// Runs both pathways and fuses them: the fast features are block-averaged
// over time by the factor alpha down to the slow time extent, then spliced
// onto the slow channels. Output: (N, C_slow + C_fast, T_slow', H', W').
inline Tensor extract_features(const ClipBatch& clip, const BackboneConfig& cfg,
                               const BackboneParams& params) {
  auto [slow_frames, fast_frames] = sample_pathways(clip, cfg);
  const Tensor slow = detail_backbone::run_pathway(slow_frames, params.slow, cfg);
  const Tensor fast = detail_backbone::run_pathway(fast_frames, params.fast, cfg);
  check(fast.shape()[2] == cfg.alpha * slow.shape()[2],
        "extract_features: pathway time contract violated");
  const Tensor fast_pooled = pool_block_avg(fast, {cfg.alpha, 1, 1});
  return concat_channels(slow, fast_pooled);
}

// Snaps a normalized box onto a feature-map grid of extent (height, width)
// with nearest-index rounding. Errors if the snapped region is empty.
inline PixelRegion snap_box(const Box& b, std::size_t sample, std::size_t height,
                            std::size_t width, std::size_t box_index = 0) {
  check_box_normalized(b, "region box");
  auto snap = [](double v, std::size_t extent) {
    const auto i = static_cast<long long>(std::llround(v * static_cast<double>(extent)));
    return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(extent)));
  };
  PixelRegion r;
  r.sample = sample;
  r.x1 = snap(b.x1, width);
  r.x2 = snap(b.x2, width);
  r.y1 = snap(b.y1, height);
  r.y2 = snap(b.y2, height);
  check(r.x1 < r.x2 && r.y1 < r.y2,
        "box " + std::to_string(box_index) + " of sample " + std::to_string(sample) +
            " has zero area after index snapping onto a " + std::to_string(width) + "x" +
            std::to_string(height) + " grid");
  return r;
}

// Per-region multi-label head: crop the feature map to each box, average the
// remaining axes, and map the descriptor to num_classes logits with a 1x1x1
// convolution. Output (B, M, 1, 1, 1), one row per box across the batch, in
// (sample, box) order. Sigmoid is applied downstream by the loss/eval.
inline Tensor classify_regions(const Tensor& features,
                               const std::vector<std::vector<Box>>& boxes,
                               const Conv3dKernel& head) {
  const Shape5& fs = features.shape();
  check(boxes.size() == fs[0], "classify_regions: box lists must match the batch extent");
  std::vector<PixelRegion> regions;
  for (std::size_t n = 0; n < boxes.size(); ++n)
    for (std::size_t i = 0; i < boxes[n].size(); ++i)
      regions.push_back(snap_box(boxes[n][i], n, fs[3], fs[4], i));
  check(!regions.empty(), "classify_regions: no boxes given");
  return conv3d(pool_regions(features, regions), head);
}

inline Conv3dKernel make_head_params(std::size_t in_channels, std::size_t num_classes,
                                     std::uint64_t seed = 0) {
  Rng rng(mix_seed(seed, 0x4ead));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  std::vector<double> w(num_classes * in_channels);
  for (double& v : w) v = rng.uniform(-bound, bound);
  Conv3dKernel k;
  k.weight = Tensor::from_values({num_classes, in_channels, 1, 1, 1}, std::move(w), true);
  k.bias = Tensor::full({1, num_classes, 1, 1, 1}, 0.0, true);
  return k;
}

inline NamedTensors backbone_named_tensors(const BackboneParams& p, const std::string& prefix = "") {
  NamedTensors out;
  auto push_path = [&](const std::string& name, const PathwayParams& path) {
    for (std::size_t i = 0; i < path.convs.size(); ++i) {
      out.emplace_back(prefix + name + "." + std::to_string(i) + ".weight", path.convs[i].weight);
      if (path.convs[i].bias)
        out.emplace_back(prefix + name + "." + std::to_string(i) + ".bias", *path.convs[i].bias);
    }
  };
  push_path("slow", p.slow);
  push_path("fast", p.fast);
  return out;
}

}  // namespace tcs3d
