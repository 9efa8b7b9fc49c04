#pragma once

// Detection evaluation: IOU box overlap, per-frame greedy matching at an IOU
// threshold, per-class average precision with all-point interpolation, mAP
// over classes that have ground truth, and per-frame false-detection /
// missing-detection rates normalized by the class count M.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcs3d/box.hpp"
#include "tcs3d/tensor.hpp"

namespace tcs3d {

inline double iou(const Box& a, const Box& b) {
  check_box(a, "iou: first box");
  check_box(b, "iou: second box");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// One annotation: ground truth when score is absent, prediction otherwise.
struct DetectionRecord {
  std::int64_t frame_id = 0;
  int class_id = 0;
  Box box;
  std::optional<double> score;  // in [0,1]

  bool is_prediction() const { return score.has_value(); }
};

struct MatchResult {
  std::vector<bool> pred_is_tp;   // aligned with the pred input order
  std::vector<bool> gt_matched;   // aligned with the gt input order
  std::vector<std::size_t> pred_rank;  // prediction indices in descending-score order
};

namespace detail_metrics {

// descending score, ties broken by frame then input position so evaluation
// order is deterministic
inline std::vector<std::size_t> score_order(const std::vector<DetectionRecord>& preds) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*preds[a].score != *preds[b].score) return *preds[a].score > *preds[b].score;
    if (preds[a].frame_id != preds[b].frame_id) return preds[a].frame_id < preds[b].frame_id;
    return a < b;
  });
  return order;
}

}  // namespace detail_metrics

// Greedy per-frame matching: predictions in descending-score order each claim
// the highest-IOU unmatched same-class ground truth; TP iff that IOU reaches
// the threshold. All records must share one frame_id.
inline MatchResult match_frame(const std::vector<DetectionRecord>& gt,
                               const std::vector<DetectionRecord>& pred, double thresh = 0.5) {
  std::optional<std::int64_t> frame;
  for (const auto& r : gt) {
    check(!r.is_prediction(), "match_frame: ground-truth record carries a score");
    if (!frame) frame = r.frame_id;
    check(r.frame_id == *frame, "match_frame: mixed frame ids in ground truth");
  }
  for (const auto& r : pred) {
    check(r.is_prediction(), "match_frame: prediction record is missing a score");
    if (!frame) frame = r.frame_id;
    check(r.frame_id == *frame, "match_frame: mixed frame ids between records");
  }

  MatchResult res;
  res.pred_is_tp.assign(pred.size(), false);
  res.gt_matched.assign(gt.size(), false);
  res.pred_rank = detail_metrics::score_order(pred);
  for (std::size_t pi : res.pred_rank) {
    const DetectionRecord& p = pred[pi];
    double best = 0.0;
    std::size_t best_gt = gt.size();
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
      if (res.gt_matched[gi] || gt[gi].class_id != p.class_id) continue;
      const double ov = iou(gt[gi].box, p.box);
      if (ov > best) {
        best = ov;
        best_gt = gi;
      }
    }
    if (best_gt != gt.size() && best >= thresh) {
      res.pred_is_tp[pi] = true;
      res.gt_matched[best_gt] = true;
    }
  }
  return res;
}

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalConfig {
  int num_classes = 8;
  double iou_thresh = 0.5;
  double score_thresh = 0.5;  // predictions below this are ignored by FR/MR
};

struct EvalReport {
  std::vector<std::optional<double>> per_class_ap;  // nullopt when a class has no ground truth
  double map = 0.0;
  double fr = 0.0;
  double mr = 0.0;
  std::vector<ClassCounts> counts;  // at score_thresh
  std::size_t num_frames = 0;
};

namespace detail_metrics {

struct FrameGroup {
  std::vector<DetectionRecord> gt, pred;
};

inline std::map<std::int64_t, FrameGroup> group_frames(const std::vector<DetectionRecord>& gt,
                                                       const std::vector<DetectionRecord>& pred) {
  std::map<std::int64_t, FrameGroup> frames;
  for (const auto& r : gt) frames[r.frame_id].gt.push_back(r);
  for (const auto& r : pred) frames[r.frame_id].pred.push_back(r);
  return frames;
}

// all-point interpolation: precision at recall r is the maximum precision at
// any recall >= r
inline double area_under_pr(const std::vector<bool>& tp_by_rank, std::size_t total_gt) {
  if (total_gt == 0) return 0.0;
  const std::size_t n = tp_by_rank.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_by_rank[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace detail_metrics

// AP for one class over a set of frames. Matching runs per frame; the PR
// curve sweeps all of the class's predictions globally by descending score.
// Requires at least one ground-truth instance of the class.
inline double average_precision(int class_id, const std::vector<DetectionRecord>& gt,
                                const std::vector<DetectionRecord>& pred,
                                double iou_thresh = 0.5) {
  std::vector<DetectionRecord> cgt, cpred;
  for (const auto& r : gt)
    if (r.class_id == class_id) cgt.push_back(r);
  for (const auto& r : pred)
    if (r.class_id == class_id) cpred.push_back(r);
  check(!cgt.empty(), "average_precision: class " + std::to_string(class_id) +
                          " has no ground-truth instances");

  auto frames = detail_metrics::group_frames(cgt, cpred);
  std::vector<bool> tp_flat;  // aligned with cpred input order
  tp_flat.assign(cpred.size(), false);
  // per-frame matching; map results back to the global prediction list
  std::map<std::int64_t, std::vector<std::size_t>> pred_positions;
  for (std::size_t i = 0; i < cpred.size(); ++i) pred_positions[cpred[i].frame_id].push_back(i);
  for (auto& [frame_id, group] : frames) {
    const MatchResult m = match_frame(group.gt, group.pred, iou_thresh);
    const auto& positions = pred_positions[frame_id];
    for (std::size_t i = 0; i < positions.size(); ++i) tp_flat[positions[i]] = m.pred_is_tp[i];
  }

  const auto order = detail_metrics::score_order(cpred);
  std::vector<bool> tp_by_rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) tp_by_rank[r] = tp_flat[order[r]];
  return detail_metrics::area_under_pr(tp_by_rank, cgt.size());
}

// Mean AP over classes that have ground truth.
inline double mean_average_precision(const std::vector<DetectionRecord>& gt,
                                     const std::vector<DetectionRecord>& pred,
                                     int num_classes = 8, double iou_thresh = 0.5) {
  double sum = 0.0;
  int evaluated = 0;
  for (int c = 0; c < num_classes; ++c) {
    bool has_gt = false;
    for (const auto& r : gt)
      if (r.class_id == c) {
        has_gt = true;
        break;
      }
    if (!has_gt) continue;
    sum += average_precision(c, gt, pred, iou_thresh);
    ++evaluated;
  }
  check(evaluated > 0, "mean_average_precision: no class has ground truth");
  return sum / evaluated;
}

// False-detection and missing-detection rates: predictions are thresholded at
// score_thresh, matched per frame, and each frame contributes fp/M and fn/M;
// the rates average those contributions over the N distinct frames present in
// the records (before thresholding — a frame whose predictions all fall below
// the threshold still counts toward N).
inline std::pair<double, double> fr_mr(const std::vector<DetectionRecord>& gt,
                                       const std::vector<DetectionRecord>& pred,
                                       const EvalConfig& cfg = {}) {
  for (const auto& r : pred) check(r.is_prediction(), "fr_mr: prediction record missing a score");
  auto frames = detail_metrics::group_frames(gt, pred);
  check(!frames.empty(), "fr_mr: no frames to evaluate");
  double fr = 0.0, mr = 0.0;
  for (auto& [frame_id, group] : frames) {
    std::vector<DetectionRecord> kept;
    for (const auto& r : group.pred)
      if (*r.score >= cfg.score_thresh) kept.push_back(r);
    const MatchResult m = match_frame(group.gt, kept, cfg.iou_thresh);
    std::size_t fp = 0, fn = 0;
    for (bool tp : m.pred_is_tp) fp += tp ? 0 : 1;
    for (bool matched : m.gt_matched) fn += matched ? 0 : 1;
    fr += static_cast<double>(fp) / cfg.num_classes;
    mr += static_cast<double>(fn) / cfg.num_classes;
  }
  const double n = static_cast<double>(frames.size());
  return {fr / n, mr / n};
}

// Full report: AP / mAP over all predictions, FR / MR and per-class counts at
// the score threshold.
inline EvalReport evaluate(const std::vector<DetectionRecord>& gt,
                           const std::vector<DetectionRecord>& pred, const EvalConfig& cfg = {}) {
  check(cfg.num_classes > 0, "evaluate: num_classes must be positive");
  for (const auto& r : gt)
    check(r.class_id >= 0 && r.class_id < cfg.num_classes,
          "evaluate: ground-truth class id out of range");
  for (const auto& r : pred)
    check(r.class_id >= 0 && r.class_id < cfg.num_classes,
          "evaluate: prediction class id out of range");

  EvalReport report;
  report.per_class_ap.assign(cfg.num_classes, std::nullopt);
  double sum = 0.0;
  int evaluated = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    bool has_gt = false;
    for (const auto& r : gt)
      if (r.class_id == c) {
        has_gt = true;
        break;
      }
    if (!has_gt) continue;
    const double ap = average_precision(c, gt, pred, cfg.iou_thresh);
    report.per_class_ap[c] = ap;
    sum += ap;
    ++evaluated;
  }
  check(evaluated > 0, "evaluate: no class has ground truth");
  report.map = sum / evaluated;

  const auto rates = fr_mr(gt, pred, cfg);
  report.fr = rates.first;
  report.mr = rates.second;

  // per-class TP/FP/FN at the score threshold
  report.counts.assign(cfg.num_classes, ClassCounts{});
  auto frames = detail_metrics::group_frames(gt, pred);
  report.num_frames = frames.size();
  for (auto& [frame_id, group] : frames) {
    std::vector<DetectionRecord> kept;
    for (const auto& r : group.pred)
      if (*r.score >= cfg.score_thresh) kept.push_back(r);
    const MatchResult m = match_frame(group.gt, kept, cfg.iou_thresh);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      auto& c = report.counts[kept[i].class_id];
      if (m.pred_is_tp[i])
        ++c.tp;
      else
        ++c.fp;
    }
    for (std::size_t i = 0; i < group.gt.size(); ++i)
      if (!m.gt_matched[i]) ++report.counts[group.gt[i].class_id].fn;
  }
  return report;
}

}  // namespace tcs3d
