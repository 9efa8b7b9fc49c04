// Command-line front end for the whole pipeline: synthetic dataset
// generation, training, evaluation, gradient checking, the gamma-sweep
// experiment, and SVG report rendering.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or IO error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tcs3d/dataset.hpp"
#include "tcs3d/gradcheck.hpp"
#include "tcs3d/metrics.hpp"
#include "tcs3d/model.hpp"
#include "tcs3d/svg.hpp"
#include "tcs3d/train.hpp"

namespace fs = std::filesystem;
using namespace tcs3d;

namespace {

DatasetSpec dataset_spec_from_kv(const KvMap& kv) {
  DatasetSpec s;
  s.num_clips = static_cast<std::size_t>(kv_int(kv, "num_clips", static_cast<std::int64_t>(s.num_clips)));
  s.t_raw = static_cast<std::size_t>(kv_int(kv, "t_raw", static_cast<std::int64_t>(s.t_raw)));
  s.height = static_cast<std::size_t>(kv_int(kv, "height", static_cast<std::int64_t>(s.height)));
  s.width = static_cast<std::size_t>(kv_int(kv, "width", static_cast<std::int64_t>(s.width)));
  const std::vector<double> probs =
      kv_double_list(kv, "class_probs", {s.class_probs.begin(), s.class_probs.end()});
  if (probs.size() != s.class_probs.size())
    io_fail("config field 'class_probs': expected " + std::to_string(s.class_probs.size()) +
            " values, got " + std::to_string(probs.size()));
  std::copy(probs.begin(), probs.end(), s.class_probs.begin());
  s.min_students = static_cast<std::size_t>(kv_int(kv, "min_students", static_cast<std::int64_t>(s.min_students)));
  s.max_students = static_cast<std::size_t>(kv_int(kv, "max_students", static_cast<std::int64_t>(s.max_students)));
  s.second_label_prob = kv_double(kv, "second_label_prob", s.second_label_prob);
  s.augment_variants = static_cast<std::size_t>(kv_int(kv, "augment_variants", static_cast<std::int64_t>(s.augment_variants)));
  s.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<std::int64_t>(s.seed)));
  const std::vector<double> ratio = kv_double_list(kv, "split_ratio", {4, 1, 1});
  if (ratio.size() != 3) io_fail("config field 'split_ratio': expected 3 values");
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratio[i] < 0 || ratio[i] != std::floor(ratio[i]))
      io_fail("config field 'split_ratio': entries must be non-negative integers");
    s.split_ratio[i] = static_cast<std::size_t>(ratio[i]);
  }
  try {
    check_dataset_spec(s);
  } catch (const std::invalid_argument& e) {
    io_fail(std::string("dataset spec: ") + e.what());
  }
  return s;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig run_config_from_kv(const KvMap& kv) {
  RunConfig rc;
  // backbone / attention
  rc.model.backbone.tau = static_cast<std::size_t>(kv_int(kv, "tau", 16));
  rc.model.backbone.alpha = static_cast<std::size_t>(kv_int(kv, "alpha", 8));
  rc.model.backbone.beta = kv_double(kv, "beta", 0.125);
  auto it = kv.find("stages");
  if (it != kv.end()) rc.model.backbone.stages = detail_model::stages_from_string(it->second);
  rc.model.ratio_t = static_cast<std::size_t>(kv_int(kv, "ratio_t", 2));
  rc.model.ratio_c = static_cast<std::size_t>(kv_int(kv, "ratio_c", 3));
  rc.model.num_classes = static_cast<std::size_t>(kv_int(kv, "num_classes", 8));
  // optimizer
  rc.train.lr = kv_double(kv, "lr", rc.train.lr);
  rc.train.momentum = kv_double(kv, "momentum", rc.train.momentum);
  rc.train.weight_decay = kv_double(kv, "weight_decay", rc.train.weight_decay);
  rc.train.epochs = static_cast<std::size_t>(kv_int(kv, "epochs", static_cast<std::int64_t>(rc.train.epochs)));
  rc.train.batch_size = static_cast<std::size_t>(kv_int(kv, "batch_size", static_cast<std::int64_t>(rc.train.batch_size)));
  rc.train.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", 0));
  // loss
  const std::string loss = kv_string(kv, "loss", "fbce");
  if (loss == "bce")
    rc.train.loss = LossKind::Bce;
  else if (loss == "fbce")
    rc.train.loss = LossKind::Fbce;
  else
    io_fail("config field 'loss': expected bce or fbce, got '" + loss + "'");
  rc.train.focal.alpha = kv_double(kv, "focal_alpha", 0.5);
  rc.train.focal.gamma = kv_double(kv, "gamma", 5.0);
  rc.train.focal.eps = kv_double(kv, "eps", 1e-7);
  // evaluation
  rc.train.eval.iou_thresh = kv_double(kv, "iou_thresh", 0.5);
  rc.train.eval.score_thresh = kv_double(kv, "score_thresh", 0.5);
  rc.train.eval.num_classes = static_cast<int>(rc.model.num_classes);
  return rc;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir)) io_fail("cannot create directory: " + dir.string());
}

void print_report(std::ostream& os, const EvalReport& report) {
  os << "frames evaluated: " << report.num_frames << "\n";
  os << "mAP@0.5:          " << format_double(report.map) << "\n";
  os << "false rate (FR):  " << format_double(report.fr) << "\n";
  os << "miss rate (MR):   " << format_double(report.mr) << "\n";
  for (std::size_t c = 0; c < report.per_class_ap.size(); ++c) {
    os << "AP class " << c << " (" << kClassTable[c].code << " " << kClassTable[c].name << "): ";
    if (report.per_class_ap[c])
      os << format_double(*report.per_class_ap[c]);
    else
      os << "n/a (no ground truth)";
    const auto& k = report.counts[c];
    os << "   tp=" << k.tp << " fp=" << k.fp << " fn=" << k.fn << "\n";
  }
}

void write_report_kv(const fs::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) io_fail("cannot open for writing: " + path.string());
  os << "map=" << format_double(report.map) << "\n";
  os << "fr=" << format_double(report.fr) << "\n";
  os << "mr=" << format_double(report.mr) << "\n";
  os << "frames=" << report.num_frames << "\n";
  for (std::size_t c = 0; c < report.per_class_ap.size(); ++c) {
    os << "ap." << c << '=';
    if (report.per_class_ap[c])
      os << format_double(*report.per_class_ap[c]);
    else
      os << "na";
    os << "\n";
  }
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
  DatasetSpec spec = spec_path.empty() ? DatasetSpec{} : dataset_spec_from_kv(load_kv_file(spec_path));
  if (seed) spec.seed = *seed;
  check_dataset_spec(spec);
  const Dataset ds = generate(spec);
  ensure_dir(out_dir);
  save_dataset(out_dir, ds);
  std::size_t n_train = 0, n_test = 0, n_val = 0;
  for (int s : ds.splits) (s == 0 ? n_train : s == 1 ? n_test : n_val) += 1;
  std::cout << "wrote " << ds.clips.size() << " clips (" << n_train << " train, " << n_test
            << " test, " << n_val << " val), " << kNumClasses << " classes, to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir) {
  const KvMap kv = config_path.empty() ? KvMap{} : load_kv_file(config_path);
  RunConfig rc = run_config_from_kv(kv);
  const DatasetView view = load_view(data_dir, static_cast<int>(rc.model.num_classes));
  check(!view.train.empty(), "training split is empty");
  rc.model.t_raw = view.train[0].frames.shape()[2];

  Model model = make_model(rc.model, rc.train.seed);
  const TrainLog log = train(model, view, rc.train, &std::cout);
  ensure_dir(out_dir);
  write_trainlog(fs::path(out_dir) / "trainlog.csv", log);
  save_model(fs::path(out_dir) / "model.ckpt", model);
  std::cout << "wrote " << (fs::path(out_dir) / "trainlog.csv").string() << " and model.ckpt\n";
  return 0;
}

int cmd_eval_model(const std::string& data_dir, const std::string& ckpt, const std::string& split,
                   const std::string& out_dir, double score_thresh, double iou_thresh) {
  const Model model = load_model(ckpt);
  const DatasetView view = load_view(data_dir, static_cast<int>(model.cfg.num_classes));
  const std::vector<ClipSample>* clips = &view.val;
  if (split == "train")
    clips = &view.train;
  else if (split == "test")
    clips = &view.test;
  else if (split != "val")
    io_fail("--split must be train, test or val");
  check(!clips->empty(), "split '" + split + "' is empty");

  EvalConfig cfg;
  cfg.num_classes = static_cast<int>(model.cfg.num_classes);
  cfg.score_thresh = score_thresh;
  cfg.iou_thresh = iou_thresh;
  const EvalReport report = evaluate_view(model, *clips, cfg);
  print_report(std::cout, report);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_report_kv(fs::path(out_dir) / "report.kv", report);
  }
  return 0;
}

int cmd_eval_csv(const std::string& gt_path, const std::string& pred_path,
                 const std::string& out_dir, double score_thresh, double iou_thresh) {
  const auto gt_rows = read_annotations(gt_path);
  const auto pred_rows = read_annotations(pred_path);
  // frames are (clip_id, frame_id) pairs; fold them into one ordered key space
  std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> keys;
  for (const auto& r : gt_rows) keys.emplace(std::make_pair(r.clip_id, r.frame_id), 0);
  for (const auto& r : pred_rows) keys.emplace(std::make_pair(r.clip_id, r.frame_id), 0);
  std::int64_t next = 0;
  for (auto& [k, v] : keys) v = next++;

  std::vector<DetectionRecord> gt, pred;
  for (const auto& r : gt_rows) {
    check(!r.score.has_value(), "--gt file contains prediction rows (score column present)");
    gt.push_back(to_detection(r, keys.at({r.clip_id, r.frame_id})));
  }
  for (const auto& r : pred_rows) {
    check(r.score.has_value(), "--pred file contains ground-truth rows (score column missing)");
    pred.push_back(to_detection(r, keys.at({r.clip_id, r.frame_id})));
  }
  EvalConfig cfg;
  cfg.score_thresh = score_thresh;
  cfg.iou_thresh = iou_thresh;
  const EvalReport report = evaluate(gt, pred, cfg);
  print_report(std::cout, report);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_report_kv(fs::path(out_dir) / "report.kv", report);
  }
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed, bool corrupt) {
  std::vector<OpCheck> checks;
  auto append = [&](std::vector<OpCheck> more) {
    for (auto& c : more) checks.push_back(std::move(c));
  };
  if (module == "all" || module == "tensor") append(gradcheck_tensor(seed));
  if (module == "all" || module == "attention") append(gradcheck_attention(seed));
  if (module == "all" || module == "loss") append(gradcheck_loss(seed));
  if (module == "all" || module == "backbone") append(gradcheck_backbone(seed));
  if (checks.empty()) io_fail("--module must be one of all, tensor, attention, loss, backbone");
  if (corrupt) checks.push_back(gradcheck_negative_control(seed));

  bool ok = true;
  for (const OpCheck& c : checks) {
    const bool pass = c.max_rel_err <= kGradCheckTol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << "  max_rel_err=" << format_double(c.max_rel_err)
              << "\n";
  }
  std::cout << (ok ? "gradcheck: all gradients within " : "gradcheck: FAILURES above ")
            << format_double(kGradCheckTol) << "\n";
  return ok ? 0 : 1;
}

int cmd_sweep(const std::string& data_dir, const std::string& config_path,
              const std::string& gammas_csv, const std::string& out_path) {
  const KvMap kv = config_path.empty() ? KvMap{} : load_kv_file(config_path);
  RunConfig rc = run_config_from_kv(kv);
  const DatasetView view = load_view(data_dir, static_cast<int>(rc.model.num_classes));
  check(!view.train.empty(), "training split is empty");
  rc.model.t_raw = view.train[0].frames.shape()[2];

  std::vector<double> gammas;
  for (const std::string& part : split_csv_line(gammas_csv)) {
    try {
      gammas.push_back(std::stod(part));
    } catch (const std::exception&) {
      io_fail("--gammas: expected comma-separated numbers, got '" + gammas_csv + "'");
    }
  }
  const auto rows = gamma_sweep(rc.model, view, rc.train, gammas, nullptr, &std::cout);
  std::ofstream os(out_path);
  if (!os) io_fail("cannot open for writing: " + out_path);
  write_sweep(os, rows);
  std::cout << "wrote " << out_path << " (" << rows.size() << " rows)\n";
  return 0;
}

struct TrainCsv {
  std::vector<double> epoch, loss, map, fr, mr;
};

TrainCsv read_trainlog_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) io_fail("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(is, line) || split_csv_line(line).size() != 5)
    io_fail("trainlog: bad header in " + path.string());
  TrainCsv out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) io_fail("trainlog line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      out.epoch.push_back(std::stod(f[0]));
      out.loss.push_back(std::stod(f[1]));
      out.map.push_back(std::stod(f[2]));
      out.fr.push_back(std::stod(f[3]));
      out.mr.push_back(std::stod(f[4]));
    } catch (const std::exception&) {
      io_fail("trainlog line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

int cmd_report(const std::vector<std::string>& logs, const std::string& sweep_path,
               const std::string& out_dir) {
  ensure_dir(out_dir);
  if (!logs.empty()) {
    std::vector<ChartSeries> series;
    for (const std::string& path : logs) {
      const TrainCsv csv = read_trainlog_csv(path);
      ChartSeries s;
      s.label = fs::path(path).stem().string();
      s.x = csv.epoch;
      s.y = csv.loss;
      series.push_back(std::move(s));
    }
    write_line_chart(fs::path(out_dir) / "loss_curves.svg", "training loss", "epoch", "loss",
                     series);
    std::cout << "wrote " << (fs::path(out_dir) / "loss_curves.svg").string() << "\n";
  }
  if (!sweep_path.empty()) {
    std::ifstream is(sweep_path);
    if (!is) io_fail("cannot open for reading: " + sweep_path);
    std::string line;
    std::getline(is, line);  // header
    ChartSeries points{"fbce", {}, {}, true};
    std::optional<double> baseline;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() < 5) io_fail("sweep line " + std::to_string(lineno) + ": expected >= 5 fields");
      try {
        if (f[0] == "bce")
          baseline = std::stod(f[2]);
        else {
          points.x.push_back(std::stod(f[1]));
          points.y.push_back(std::stod(f[2]));
        }
      } catch (const std::exception&) {
        io_fail("sweep line " + std::to_string(lineno) + ": malformed number");
      }
    }
    std::vector<ChartSeries> series{points};
    if (baseline && !points.x.empty()) {
      const double lo = *std::min_element(points.x.begin(), points.x.end());
      const double hi = *std::max_element(points.x.begin(), points.x.end());
      series.push_back({"bce baseline", {lo, hi}, {*baseline, *baseline}, false});
    }
    write_line_chart(fs::path(out_dir) / "gamma_sweep.svg", "mAP vs gamma", "gamma", "mAP",
                     series);
    std::cout << "wrote " << (fs::path(out_dir) / "gamma_sweep.svg").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal attention pipeline: synthetic data, training, evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic long-tail dataset");
  std::string synth_spec, synth_out = "dataset";
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--spec", synth_spec, "dataset spec file (key=value)");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "override the spec seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the model on a dataset directory");
  std::string train_data, train_config, train_out = "run";
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--config", train_config, "training config file (key=value)");
  train_cmd->add_option("--out", train_out, "output directory (trainlog.csv, model.ckpt)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or prediction CSVs");
  std::string eval_data, eval_ckpt, eval_split = "val", eval_gt, eval_pred, eval_out;
  double eval_score_thresh = 0.5, eval_iou_thresh = 0.5;
  eval_cmd->add_option("--data", eval_data, "dataset directory (model mode)");
  eval_cmd->add_option("--ckpt", eval_ckpt, "model checkpoint (model mode)");
  eval_cmd->add_option("--split", eval_split, "train|test|val (model mode)");
  eval_cmd->add_option("--gt", eval_gt, "ground-truth annotations CSV (file mode)");
  eval_cmd->add_option("--pred", eval_pred, "prediction annotations CSV (file mode)");
  eval_cmd->add_option("--out", eval_out, "directory for report.kv");
  eval_cmd->add_option("--score-thresh", eval_score_thresh, "FR/MR confidence threshold");
  eval_cmd->add_option("--iou-thresh", eval_iou_thresh, "matching IOU threshold");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string grad_module = "all";
  std::uint64_t grad_seed = 1;
  bool grad_corrupt = false;
  grad_cmd->add_option("--module", grad_module, "all|tensor|attention|loss|backbone");
  grad_cmd->add_option("--seed", grad_seed, "rng seed");
  grad_cmd->add_flag("--corrupt", grad_corrupt,
                     "fault-injection self-test: include a deliberately wrong gradient");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "train across a gamma grid plus a BCE baseline");
  std::string sweep_data, sweep_config, sweep_gammas = "0.1,0.5,1,2,5,8,10",
              sweep_out = "sweep.csv";
  sweep_cmd->add_option("--data", sweep_data, "dataset directory")->required();
  sweep_cmd->add_option("--config", sweep_config, "training config file");
  sweep_cmd->add_option("--gammas", sweep_gammas, "comma-separated gamma grid");
  sweep_cmd->add_option("--out", sweep_out, "output CSV path");

  // report
  auto* report_cmd = app.add_subcommand("report", "render SVG charts from CSV outputs");
  std::vector<std::string> report_logs;
  std::string report_sweep, report_out = "report";
  report_cmd->add_option("--log", report_logs, "trainlog CSV (repeatable)");
  report_cmd->add_option("--sweep", report_sweep, "sweep CSV");
  report_cmd->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out, synth_seed);
    if (train_cmd->parsed()) return cmd_train(train_data, train_config, train_out);
    if (eval_cmd->parsed()) {
      const bool file_mode = !eval_gt.empty() || !eval_pred.empty();
      if (file_mode) {
        if (eval_gt.empty() || eval_pred.empty())
          io_fail("file mode needs both --gt and --pred");
        return cmd_eval_csv(eval_gt, eval_pred, eval_out, eval_score_thresh, eval_iou_thresh);
      }
      if (eval_data.empty() || eval_ckpt.empty())
        io_fail("model mode needs --data and --ckpt (or use --gt/--pred)");
      return cmd_eval_model(eval_data, eval_ckpt, eval_split, eval_out, eval_score_thresh,
                            eval_iou_thresh);
    }
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_module, grad_seed, grad_corrupt);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_data, sweep_config, sweep_gammas, sweep_out);
    if (report_cmd->parsed()) return cmd_report(report_logs, report_sweep, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
