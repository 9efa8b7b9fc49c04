#pragma once

// SGD training loop (momentum + weight decay folded into the gradient),
// per-epoch validation metrics, and the gamma-sweep experiment comparing FBce
// against the BCE baseline. Deterministic given the config seed: data order
// is reshuffled from a per-epoch derived seed and all reductions run in a
// fixed order on one thread.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tcs3d/dataset.hpp"
#include "tcs3d/loss.hpp"
#include "tcs3d/metrics.hpp"
#include "tcs3d/model.hpp"
#include "tcs3d/rng.hpp"

namespace tcs3d {

enum class LossKind { Bce, Fbce };

struct TrainConfig {
  double lr = 0.075;
  double momentum = 0.9;
  double weight_decay = 0.00001;
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Fbce;
  FocalParams focal{0.5, 5.0, 1e-7};
  EvalConfig eval{};
};

inline void check_train_config(const TrainConfig& cfg) {
  check(cfg.lr > 0.0, "TrainConfig: lr must be positive");
  check(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "TrainConfig: momentum must lie in [0,1)");
  check(cfg.weight_decay >= 0.0, "TrainConfig: weight_decay must be >= 0");
  check(cfg.epochs >= 1, "TrainConfig: epochs must be >= 1");
  check(cfg.batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  if (cfg.loss == LossKind::Fbce) check_focal_params(cfg.focal);
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch's batches
  double map = 0.0, fr = 0.0, mr = 0.0;  // validation metrics
  double wall_ms = 0.0;   // not serialized; CSV carries epoch,loss,map,fr,mr
};

struct TrainLog {
  std::vector<EpochLog> rows;
};

// v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
inline void sgd_step(std::span<double> param, std::span<const double> grad,
                     std::span<double> velocity, const TrainConfig& cfg) {
  check(param.size() == grad.size() && param.size() == velocity.size(),
        "sgd_step: param/grad/velocity sizes disagree");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grad[i] + cfg.weight_decay * param[i];
    param[i] -= cfg.lr * velocity[i];
  }
}

struct SgdState {
  std::vector<std::vector<double>> velocity;  // aligned with the parameter list
};

inline SgdState make_sgd_state(const NamedTensors& params) {
  SgdState st;
  for (const auto& [name, t] : params) st.velocity.emplace_back(t.size(), 0.0);
  return st;
}

inline void sgd_step_all(NamedTensors& params, SgdState& state, const TrainConfig& cfg) {
  check(params.size() == state.velocity.size(), "sgd_step_all: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].second;
    check(t.has_grad(), "sgd_step_all: parameter '" + params[i].first + "' has no gradient");
    sgd_step(t.values_mut(), t.grad(), state.velocity[i], cfg);
  }
}

// ---------------------------------------------------------------------------
// batching and evaluation helpers
// ---------------------------------------------------------------------------

namespace detail_train {

inline ClipBatch assemble_batch(const std::vector<const ClipSample*>& samples) {
  check(!samples.empty(), "assemble_batch: empty batch");
  const Shape5& s0 = samples[0]->frames.shape();
  const Shape5 bs{samples.size(), s0[1], s0[2], s0[3], s0[4]};
  std::vector<double> vals(numel(bs));
  const std::size_t per = numel(Shape5{1, s0[1], s0[2], s0[3], s0[4]});
  ClipBatch batch;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    check(samples[i]->frames.shape() == s0, "assemble_batch: clip shapes differ within a batch");
    const auto v = samples[i]->frames.values();
    std::copy(v.begin(), v.end(), vals.begin() + static_cast<std::ptrdiff_t>(i * per));
    batch.boxes.push_back(samples[i]->boxes);
  }
  batch.frames = Tensor::from_values(bs, std::move(vals));
  return batch;
}

// multi-hot (B, M, 1, 1, 1) targets aligned with classify_regions' box order
inline Tensor assemble_targets(const std::vector<const ClipSample*>& samples, int num_classes) {
  std::size_t boxes = 0;
  for (const ClipSample* s : samples) boxes += s->boxes.size();
  const Shape5 ts{boxes, static_cast<std::size_t>(num_classes), 1, 1, 1};
  std::vector<double> vals(numel(ts), 0.0);
  std::size_t row = 0;
  for (const ClipSample* s : samples)
    for (const auto& classes : s->box_classes) {
      for (int c : classes) {
        check(c >= 0 && c < num_classes, "assemble_targets: class id out of range");
        vals[row * num_classes + static_cast<std::size_t>(c)] = 1.0;
      }
      ++row;
    }
  return Tensor::from_values(ts, std::move(vals));
}

}  // namespace detail_train

// Runs the model over a set of clips and scores every class for every
// ground-truth box; the keyframe of each clip is one evaluation frame, keyed
// by clip id.
struct PredictionSet {
  std::vector<DetectionRecord> gt, pred;
};

inline PredictionSet predict_view(const Model& m, const std::vector<ClipSample>& clips) {
  PredictionSet out;
  for (const ClipSample& clip : clips) {
    if (clip.boxes.empty()) continue;
    ClipBatch batch;
    batch.frames = clip.frames;
    batch.boxes = {clip.boxes};
    const Tensor probs = sigmoid(model_logits(m, batch));
    const auto pv = probs.values();
    const std::size_t m_classes = probs.shape()[1];
    for (std::size_t b = 0; b < clip.boxes.size(); ++b) {
      for (int c : clip.box_classes[b])
        out.gt.push_back(DetectionRecord{clip.clip_id, c, clip.boxes[b], std::nullopt});
      for (std::size_t c = 0; c < m_classes; ++c)
        out.pred.push_back(DetectionRecord{clip.clip_id, static_cast<int>(c), clip.boxes[b],
                                           pv[b * m_classes + c]});
    }
  }
  return out;
}

inline EvalReport evaluate_view(const Model& m, const std::vector<ClipSample>& clips,
                                const EvalConfig& cfg) {
  const PredictionSet p = predict_view(m, clips);
  return evaluate(p.gt, p.pred, cfg);
}

// mean AP over the tail classes (ids 2..7, letter codes C-H) that have
// ground truth
inline std::optional<double> tail_mean_ap(const EvalReport& report) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 2; c < report.per_class_ap.size(); ++c)
    if (report.per_class_ap[c]) {
      sum += *report.per_class_ap[c];
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

// Trains in place. Aborts with an exception if the loss leaves the finite
// range (divergence guard). `progress`, when given, receives one line per
// epoch.
inline TrainLog train(Model& model, const DatasetView& data, const TrainConfig& cfg,
                      std::ostream* progress = nullptr) {
  check_train_config(cfg);
  check(!data.train.empty(), "train: empty training split");
  check(!data.val.empty(), "train: empty validation split");

  NamedTensors params = model_named_tensors(model);
  SgdState state = make_sgd_state(params);
  TrainLog log;

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(mix_seed(cfg.seed, 0xe90c0 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const ClipSample*> samples;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        samples.push_back(&data.train[order[i]]);
      bool any_boxes = false;
      for (const ClipSample* s : samples) any_boxes = any_boxes || !s->boxes.empty();
      if (!any_boxes) continue;

      const ClipBatch batch = detail_train::assemble_batch(samples);
      const Tensor targets =
          detail_train::assemble_targets(samples, static_cast<int>(model.cfg.num_classes));
      const Tensor probs = sigmoid(model_logits(model, batch));
      const LabelBatch lb{probs, targets};
      const Tensor loss = cfg.loss == LossKind::Bce ? bce(lb) : fbce(lb, cfg.focal);
      const double loss_value = loss.values()[0];
      if (!std::isfinite(loss_value))
        throw std::runtime_error("train: loss diverged to a non-finite value at epoch " +
                                 std::to_string(epoch));
      loss_sum += loss_value;
      ++batches;

      for (auto& [name, t] : params) t.zero_grad();
      backward(loss);
      sgd_step_all(params, state, cfg);
    }
    check(batches > 0, "train: no batch contained any boxes");

    const EvalReport report = evaluate_view(model, data.val, cfg.eval);
    EpochLog row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(batches);
    row.map = report.map;
    row.fr = report.fr;
    row.mr = report.mr;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    log.rows.push_back(row);
    if (progress)
      (*progress) << "epoch " << epoch << "  loss " << row.loss << "  map " << row.map << "  fr "
                  << row.fr << "  mr " << row.mr << "  (" << row.wall_ms << " ms)\n";
  }
  return log;
}

inline void write_trainlog(std::ostream& os, const TrainLog& log) {
  os << "epoch,loss,map,fr,mr\n";
  for (const EpochLog& r : log.rows)
    os << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.map) << ','
       << format_double(r.fr) << ',' << format_double(r.mr) << '\n';
}

inline void write_trainlog(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  write_trainlog(os, log);
}

// ---------------------------------------------------------------------------
// gamma sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string loss_name;            // "bce" or "fbce"
  std::optional<double> gamma;      // absent for the bce baseline
  double map = 0.0, fr = 0.0, mr = 0.0;
  std::optional<double> tail_map;
};

// Trains one fresh model per gamma plus a BCE baseline, all from the same
// seed and epoch budget, and reports final validation metrics per row.
inline std::vector<SweepRow> gamma_sweep(const ModelConfig& model_cfg, const DatasetView& data,
                                         const TrainConfig& base,
                                         const std::vector<double>& gammas,
                                         std::vector<TrainLog>* logs = nullptr,
                                         std::ostream* progress = nullptr) {
  std::vector<SweepRow> rows;
  auto run = [&](LossKind kind, std::optional<double> gamma) {
    TrainConfig cfg = base;
    cfg.loss = kind;
    if (gamma) cfg.focal.gamma = *gamma;
    Model model = make_model(model_cfg, cfg.seed);
    if (progress)
      (*progress) << "sweep: training " << (kind == LossKind::Bce ? "bce" : "fbce")
                  << (gamma ? " gamma=" + format_double(*gamma) : std::string()) << "\n";
    const TrainLog log = train(model, data, cfg);
    const EvalReport report = evaluate_view(model, data.val, cfg.eval);
    SweepRow row;
    row.loss_name = kind == LossKind::Bce ? "bce" : "fbce";
    row.gamma = gamma;
    row.map = report.map;
    row.fr = report.fr;
    row.mr = report.mr;
    row.tail_map = tail_mean_ap(report);
    rows.push_back(row);
    if (logs) logs->push_back(log);
  };
  run(LossKind::Bce, std::nullopt);
  for (double g : gammas) run(LossKind::Fbce, g);
  return rows;
}

inline void write_sweep(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "loss,gamma,map,fr,mr,tail_map\n";
  for (const SweepRow& r : rows) {
    os << r.loss_name << ',' << (r.gamma ? format_double(*r.gamma) : std::string()) << ','
       << format_double(r.map) << ',' << format_double(r.fr) << ',' << format_double(r.mr) << ','
       << (r.tail_map ? format_double(*r.tail_map) : std::string()) << '\n';
  }
}

inline void write_sweep(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  write_sweep(os, rows);
}

}  // namespace tcs3d
