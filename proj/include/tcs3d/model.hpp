#pragma once

// Full trainable model: dual-pathway backbone -> TCS3D attention -> per-region
// multi-label head, plus named-tensor checkpointing.

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tcs3d/attention.hpp"
#include "tcs3d/backbone.hpp"
#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t t_raw = 32;    // clip length the model is built for
  std::size_t ratio_t = 2;   // temporal squeeze ratio; must divide the feature time extent
  std::size_t ratio_c = 3;   // channel squeeze ratio; must divide the fused channel count
  std::size_t num_classes = 8;

  std::size_t feature_time() const {
    check(t_raw % backbone.tau == 0, "ModelConfig: t_raw not divisible by tau");
    std::size_t t = t_raw / backbone.tau;
    for (const StageSpec& st : backbone.stages) {
      check(t % st.pool[0] == 0, "ModelConfig: stage temporal pool does not divide time extent");
      t /= st.pool[0];
    }
    return t;
  }

  std::size_t feature_channels() const { return backbone.fused_channels(); }
};

struct Model {
  ModelConfig cfg;
  BackboneParams backbone;
  AttentionParams attn;
  Conv3dKernel head;
};

inline Model make_model(const ModelConfig& cfg, std::uint64_t seed = 0) {
  check_backbone_config(cfg.backbone);
  Model m;
  m.cfg = cfg;
  m.backbone = make_backbone_params(cfg.backbone, seed);
  m.attn = make_attention_params(cfg.feature_channels(), cfg.feature_time(), cfg.ratio_t,
                                 cfg.ratio_c, seed);
  m.head = make_head_params(cfg.feature_channels(), cfg.num_classes, seed);
  return m;
}

// Per-box class logits (B, M, 1, 1, 1) for all boxes of the batch, in
// (sample, box) order.
inline Tensor model_logits(const Model& m, const ClipBatch& batch) {
  const Tensor features = extract_features(batch, m.cfg.backbone, m.backbone);
  auto [gated, trace] = tcs3d_forward(features, m.attn);
  return classify_regions(gated, batch.boxes, m.head);
}

inline NamedTensors model_named_tensors(const Model& m) {
  NamedTensors out = backbone_named_tensors(m.backbone, "backbone.");
  for (auto& nt : attention_named_tensors(m.attn)) out.push_back(std::move(nt));
  out.emplace_back("head.weight", m.head.weight);
  if (m.head.bias) out.emplace_back("head.bias", *m.head.bias);
  return out;
}

namespace detail_model {

inline std::string stages_to_string(const std::vector<StageSpec>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(stages[i].out_channels) + ':' + std::to_string(stages[i].pool[0]) +
           ':' + std::to_string(stages[i].pool[1]) + ':' + std::to_string(stages[i].pool[2]);
  }
  return out;
}

inline std::vector<StageSpec> stages_from_string(const std::string& s) {
  std::vector<StageSpec> stages;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    StageSpec st;
    if (std::sscanf(item.c_str(), "%zu:%zu:%zu:%zu", &st.out_channels, &st.pool[0], &st.pool[1],
                    &st.pool[2]) != 4)
      io_fail("checkpoint: malformed stage spec '" + item + "'");
    stages.push_back(st);
  }
  if (stages.empty()) io_fail("checkpoint: empty stage spec");
  return stages;
}

}  // namespace detail_model

inline void save_model(const std::filesystem::path& path, const Model& m) {
  KvMap config;
  config["tau"] = std::to_string(m.cfg.backbone.tau);
  config["alpha"] = std::to_string(m.cfg.backbone.alpha);
  config["beta"] = format_double(m.cfg.backbone.beta);
  config["in_channels"] = std::to_string(m.cfg.backbone.in_channels);
  config["stages"] = detail_model::stages_to_string(m.cfg.backbone.stages);
  config["t_raw"] = std::to_string(m.cfg.t_raw);
  config["ratio_t"] = std::to_string(m.cfg.ratio_t);
  config["ratio_c"] = std::to_string(m.cfg.ratio_c);
  config["num_classes"] = std::to_string(m.cfg.num_classes);
  save_checkpoint(path, model_named_tensors(m), config);
}

inline Model load_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  ModelConfig cfg;
  cfg.backbone.tau = static_cast<std::size_t>(kv_int(ck.config, "tau", 16));
  cfg.backbone.alpha = static_cast<std::size_t>(kv_int(ck.config, "alpha", 8));
  cfg.backbone.beta = kv_double(ck.config, "beta", 0.125);
  cfg.backbone.in_channels = static_cast<std::size_t>(kv_int(ck.config, "in_channels", 3));
  auto it = ck.config.find("stages");
  if (it != ck.config.end()) cfg.backbone.stages = detail_model::stages_from_string(it->second);
  cfg.t_raw = static_cast<std::size_t>(kv_int(ck.config, "t_raw", 32));
  cfg.ratio_t = static_cast<std::size_t>(kv_int(ck.config, "ratio_t", 2));
  cfg.ratio_c = static_cast<std::size_t>(kv_int(ck.config, "ratio_c", 3));
  cfg.num_classes = static_cast<std::size_t>(kv_int(ck.config, "num_classes", 8));

  Model m = make_model(cfg, 0);
  for (auto& [name, tensor] : model_named_tensors(m)) {
    const Tensor* stored = ck.find(name);
    if (!stored) io_fail("checkpoint: missing tensor '" + name + "'");
    check(stored->shape() == tensor.shape(),
          "checkpoint: tensor '" + name + "' has shape " + shape_str(stored->shape()) +
              ", expected " + shape_str(tensor.shape()));
    auto dst = tensor.values_mut();
    const auto src = stored->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return m;
}

}  // namespace tcs3d
