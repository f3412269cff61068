// Command-line front end: dataset generation, single training runs, checkpoint
// evaluation, the ablation grid, the gate-threshold sweep, and plot rendering.
// All heavy lifting lives in the core library; this file is flag plumbing.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uadan/experiment/experiment.hpp"
#include "uadan/plots/svg_plot.hpp"
#include "uadan/training/trainer.hpp"

namespace {

using uadan::training::ExperimentConfig;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;     // I/O and other runtime failures
constexpr int kExitConfig = 2;    // invalid configuration or arguments
constexpr int kExitDiverged = 3;  // training produced a non-finite loss

struct ScalarOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> xi;
  std::optional<std::string> mode;
  std::optional<int> iters;
};

void add_override_flags(CLI::App* cmd, ScalarOverrides& ov, bool with_mode) {
  cmd->add_option("--seed", ov.seed, "override the training seed");
  cmd->add_option("--xi", ov.xi, "override the curriculum gate threshold");
  if (with_mode) cmd->add_option("--mode", ov.mode, "override the ablation mode");
  cmd->add_option("--iters", ov.iters,
                  "override the total iteration budget (split 5:2 across the two phases)");
}

ExperimentConfig load_config(const std::string& path, const ScalarOverrides& ov) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    cfg = ExperimentConfig::from_json(j);
  } else {
    cfg = ExperimentConfig::defaults();
  }
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.xi) cfg.train.xi = *ov.xi;
  if (ov.mode) cfg.train.mode = uadan::ablation_mode_from_string(*ov.mode);
  if (ov.iters) {
    if (*ov.iters < 1) throw std::invalid_argument("config: --iters must be positive");
    cfg.train.optim.iters_initial = *ov.iters * 5 / 7;
    cfg.train.optim.iters_final = *ov.iters - cfg.train.optim.iters_initial;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> seed_list(const ScalarOverrides& ov) {
  if (ov.seed) return {*ov.seed};
  return uadan::experiment::default_seeds();
}

void print_outcome(const uadan::experiment::RunOutcome& o) {
  std::printf("%s%s: best mAP %.1f @ iter %d, final mAP %.1f  (%s)\n", o.id.c_str(),
              o.reused ? " [cached]" : "", 100.0 * o.best_map, o.best_iteration,
              100.0 * o.final_map, o.dir.string().c_str());
}

int cmd_gen(const std::string& config_path, const ScalarOverrides& ov, const std::string& out,
            bool force) {
  const ExperimentConfig cfg = load_config(config_path, ov);
  const std::filesystem::path dir =
      out.empty() ? uadan::experiment::default_dataset_dir(cfg.data) : std::filesystem::path(out);
  uadan::experiment::generate_datasets(cfg.data, dir, force);
  const auto paths = uadan::experiment::dataset_paths(dir);
  std::printf("wrote %s (%d samples)\n", paths.source.string().c_str(), cfg.data.train_source);
  std::printf("wrote %s (%d samples)\n", paths.target_train.string().c_str(),
              cfg.data.train_target);
  std::printf("wrote %s (%d samples)\n", paths.target_eval.string().c_str(), cfg.data.eval_target);
  return kExitOk;
}

int cmd_train(const std::string& config_path, const ScalarOverrides& ov, bool force) {
  const ExperimentConfig cfg = load_config(config_path, ov);
  const uadan::experiment::RunOutcome outcome = uadan::experiment::run_single(cfg, force);
  uadan::experiment::write_run_plots(outcome.dir);
  print_outcome(outcome);
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const ScalarOverrides& ov, const std::string& out,
               bool force) {
  const ExperimentConfig cfg = load_config(config_path, ov);
  const auto report = uadan::experiment::run_ablation(cfg, seed_list(ov), force);
  const std::filesystem::path dir =
      out.empty() ? uadan::experiment::out_root() / "reports" / "ablation"
                  : std::filesystem::path(out);
  uadan::experiment::write_ablation_outputs(report, dir, /*include_reference=*/true);
  std::ifstream txt(dir / "ablation.txt");
  std::cout << txt.rdbuf();
  int failed = 0;
  for (const auto& r : report.runs) failed += r.ok ? 0 : 1;
  if (failed > 0) std::printf("\n%d run(s) failed; see %s\n", failed, dir.string().c_str());
  return kExitOk;
}

int cmd_sweep_xi(const std::string& config_path, const ScalarOverrides& ov, const std::string& out,
                 bool force) {
  const ExperimentConfig cfg = load_config(config_path, ov);
  const std::vector<double> xis =
      ov.xi ? std::vector<double>{*ov.xi} : uadan::experiment::default_xi_grid();
  ScalarOverrides seeds_only = ov;  // xi selects the grid, not a config override here
  const auto report = uadan::experiment::run_xi_sweep(cfg, xis, seed_list(seeds_only), force);
  const std::filesystem::path dir =
      out.empty() ? uadan::experiment::out_root() / "reports" / "sweep_xi"
                  : std::filesystem::path(out);
  uadan::experiment::write_sweep_outputs(report, dir);
  std::ifstream txt(dir / "sweep_xi.txt");
  std::cout << txt.rdbuf();
  return kExitOk;
}

int cmd_plot(const std::string& run_dir) {
  uadan::experiment::write_run_plots(run_dir);
  std::printf("wrote plots under %s\n", run_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir,
             const std::string& compare_path, const std::string& out) {
  namespace fs = std::filesystem;
  using namespace uadan;

  const training::Checkpoint ck = training::load_checkpoint(checkpoint_path);
  const ExperimentConfig cfg = ExperimentConfig::from_json(ck.config);
  if (cfg.hash() != ck.config_hash) {
    throw std::invalid_argument("eval: checkpoint config hash does not match its config");
  }
  detector::TwoStageDetector model(cfg.detector, cfg.train.seed);
  for (nn::Param* p : model.params()) {
    const auto it = ck.tensors.find(p->name);
    if (it == ck.tensors.end()) {
      throw std::invalid_argument("eval: checkpoint is missing tensor " + p->name);
    }
    p->value = it->second;
  }

  const std::vector<datagen::DetectionSample> samples = datagen::load_dataset(dataset_dir);
  if (samples.empty()) throw std::invalid_argument("eval: dataset is empty");
  if (samples.front().image().h != cfg.detector.height ||
      samples.front().image().w != cfg.detector.width) {
    throw std::invalid_argument("eval: dataset image size does not match the checkpoint's model");
  }

  // Low-threshold detections for AP, display-threshold detections for the
  // error reports and the interchange file, instance features for variance.
  std::vector<evaluation::ImageEval> curve_images, report_images;
  std::vector<std::pair<int, Eigen::VectorXd>> features;
  for (const datagen::DetectionSample& s : samples) {
    const auto& truths = s.eval_labels();
    curve_images.push_back({model.detect(s.image(), training::kApCollectionThreshold), truths});
    report_images.push_back({model.detect(s.image()), truths});

    const Tensor3 feat = model.backbone().forward(s.image());
    const auto proposals = model.propose(model.rpn().forward(feat));
    if (proposals.empty()) continue;
    const Eigen::MatrixXd instances =
        model.projection().forward(model.pool_proposals(feat, proposals));
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      double best_iou = 0.0;
      int best_class = 0;
      for (const auto& t : truths) {
        const double v = iou(proposals[i].box, t.box);
        if (v > best_iou) {
          best_iou = v;
          best_class = t.class_id;
        }
      }
      if (best_iou >= 0.5) {
        features.emplace_back(best_class, instances.col(static_cast<Eigen::Index>(i)));
      }
    }
  }

  const evaluation::EvalResult result =
      evaluation::evaluate(curve_images, cfg.detector.classes, 0.5);
  const evaluation::ErrorBuckets buckets = evaluation::error_buckets(report_images);

  nlohmann::json metrics{{"format_version", 1},
                         {"version", experiment::kVersion},
                         {"config_hash", ck.config_hash},
                         {"checkpoint_iteration", ck.iteration},
                         {"collection_threshold", training::kApCollectionThreshold},
                         {"detection_threshold", cfg.detector.score_threshold},
                         {"map", result.map}};
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& ce : result.per_class) {
    per_class.push_back({{"class_id", ce.class_id},
                         {"ap", ce.ap},
                         {"gt", ce.gt_count},
                         {"tp", ce.tp},
                         {"fp", ce.fp}});
  }
  metrics["per_class"] = std::move(per_class);
  metrics["error_buckets"] = {{"gt_total", buckets.gt_total},
                              {"det_total", buckets.det_total},
                              {"correct", buckets.correct},
                              {"duplicates", buckets.duplicates},
                              {"misclassified", buckets.misclassified},
                              {"mislocalized", buckets.mislocalized},
                              {"background", buckets.background},
                              {"missed", buckets.missed},
                              {"precision", buckets.precision},
                              {"recall", buckets.recall}};

  const fs::path out_dir = out.empty() ? fs::path(checkpoint_path).parent_path() : fs::path(out);
  fs::create_directories(out_dir);

  int matched_classes = 0;
  {
    std::vector<int> seen;
    for (const auto& [cls, f] : features) {
      if (std::find(seen.begin(), seen.end(), cls) == seen.end()) seen.push_back(cls);
    }
    matched_classes = static_cast<int>(seen.size());
  }
  if (matched_classes >= 2) {
    const auto var = evaluation::class_variance(features, 200, cfg.train.seed);
    metrics["variance"] = {{"within", var.within},
                           {"between", var.between},
                           {"total", var.total},
                           {"classes_used", var.classes_used},
                           {"samples_used", var.samples_used}};

    Eigen::MatrixXd fmat(features.front().second.size(),
                         static_cast<Eigen::Index>(features.size()));
    for (std::size_t i = 0; i < features.size(); ++i) {
      fmat.col(static_cast<Eigen::Index>(i)) = features[i].second;
    }
    const Eigen::MatrixXd projected = plots::principal_plane(fmat);
    std::vector<plots::ScatterGroup> groups(static_cast<std::size_t>(cfg.detector.classes));
    for (int c = 1; c <= cfg.detector.classes; ++c) {
      groups[static_cast<std::size_t>(c - 1)].label = "class " + std::to_string(c);
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& g = groups[static_cast<std::size_t>(features[i].first - 1)];
      g.x.push_back(projected(0, static_cast<Eigen::Index>(i)));
      g.y.push_back(projected(1, static_cast<Eigen::Index>(i)));
    }
    plots::PlotOptions opt;
    opt.title = "instance features, principal plane (linear projection)";
    opt.x_label = "pc 1";
    opt.y_label = "pc 2";
    plots::write_scatter_svg(out_dir / "feature_scatter.svg", groups, opt);
  }

  if (!compare_path.empty()) {
    std::ifstream in(compare_path);
    if (!in) throw std::invalid_argument("eval: cannot open --compare file " + compare_path);
    const auto baseline = evaluation::detections_from_json(nlohmann::json::parse(in));
    const evaluation::ErrorAnalysis ea = evaluation::error_analysis(baseline, report_images, 0.5);
    metrics["error_analysis"] = {{"gt_total", ea.gt_total},
                                 {"baseline_matched", ea.baseline_matched},
                                 {"adapted_matched", ea.adapted_matched},
                                 {"both_matched", ea.both_matched},
                                 {"recovered", ea.recovered},
                                 {"induced", ea.induced},
                                 {"recovered_tp_rate", ea.recovered_tp_rate},
                                 {"induced_fn_rate", ea.induced_fn_rate},
                                 {"recovered_rate_defined", ea.recovered_rate_defined},
                                 {"induced_rate_defined", ea.induced_rate_defined}};
  }

  {
    std::ofstream det_out(out_dir / "detections.json");
    det_out << evaluation::detections_to_json(report_images).dump(1) << "\n";
    std::ofstream met_out(out_dir / "metrics_eval.json");
    met_out << metrics.dump(1) << "\n";
  }
  experiment::write_pr_curves(out_dir / "pr_curves.svg", result);

  std::printf("mAP@0.5 = %.1f over %zu images (%s)\n", 100.0 * result.map, samples.size(),
              out_dir.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for uncertainty-aware domain-adaptive detection"};
  app.require_subcommand(1);

  std::string config_path, out, compare_path, run_dir;
  std::string eval_checkpoint, eval_dataset;
  bool force = false;
  ScalarOverrides ov;

  CLI::App* gen = app.add_subcommand("gen", "generate the source/target dataset splits");
  gen->add_option("--config", config_path, "experiment config JSON");
  gen->add_option("--out", out, "dataset directory (default: content-addressed under out root)");
  gen->add_flag("--force", force, "regenerate existing splits");
  add_override_flags(gen, ov, false);

  CLI::App* train = app.add_subcommand("train", "train one configuration");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--out", out, "output root (overrides UADAN_OUT_ROOT)");
  train->add_flag("--force", force, "discard any existing run directory");
  add_override_flags(train, ov, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint JSON path")->required();
  eval->add_option("dataset", eval_dataset, "dataset split directory")->required();
  eval->add_option("--compare", compare_path, "detections.json of a baseline run to compare");
  eval->add_option("--out", out, "output directory (default: alongside the checkpoint)");

  CLI::App* ablate = app.add_subcommand("ablate", "run the full mode grid");
  ablate->add_option("--config", config_path, "experiment config JSON");
  ablate->add_option("--out", out, "report directory");
  ablate->add_flag("--force", force, "redo completed runs");
  add_override_flags(ablate, ov, false);

  CLI::App* sweep = app.add_subcommand("sweep-xi", "sweep the curriculum gate threshold");
  sweep->add_option("--config", config_path, "experiment config JSON");
  sweep->add_option("--out", out, "report directory");
  sweep->add_flag("--force", force, "redo completed runs");
  add_override_flags(sweep, ov, false);

  CLI::App* plot = app.add_subcommand("plot", "render SVG plots for a run directory");
  plot->add_option("run_dir", run_dir, "run directory with history.ndjson")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, ov, out, force);
    if (train->parsed()) {
      if (!out.empty()) setenv("UADAN_OUT_ROOT", out.c_str(), 1);
      return cmd_train(config_path, ov, force);
    }
    if (eval->parsed()) return cmd_eval(eval_checkpoint, eval_dataset, compare_path, out);
    if (ablate->parsed()) return cmd_ablate(config_path, ov, out, force);
    if (sweep->parsed()) return cmd_sweep_xi(config_path, ov, out, force);
    if (plot->parsed()) return cmd_plot(run_dir);
  } catch (const uadan::training::TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitOk;
}
