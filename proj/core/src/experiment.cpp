#include "uadan/experiment/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "uadan/evaluation/evaluation.hpp"
#include "uadan/plots/svg_plot.hpp"
#include "uadan/util/rng.hpp"

namespace uadan::experiment {

namespace {

std::string format_double(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/** Everything that determines dataset content, as one canonical document. */
nlohmann::json data_config_json(const training::DataConfig& data) {
  return nlohmann::json{{"dataset", datagen::dataset_config_to_json(data.dataset)},
                        {"shift", datagen::shift_to_json(data.shift)},
                        {"train_source", data.train_source},
                        {"train_target", data.train_target},
                        {"eval_target", data.eval_target},
                        {"data_seed", data.data_seed}};
}

struct SplitSpec {
  std::string name;
  int count = 0;
  datagen::Domain domain = datagen::Domain::source;
};

std::vector<SplitSpec> split_specs(const training::DataConfig& data) {
  return {{"source", data.train_source, datagen::Domain::source},
          {"target_train", data.train_target, datagen::Domain::target},
          {"target_eval", data.eval_target, datagen::Domain::target}};
}

std::uint64_t split_seed(const training::DataConfig& data, const std::string& split) {
  return data.data_seed ^ util::fnv1a64("split." + split);
}

void generate_split(const training::DataConfig& data, const SplitSpec& spec,
                    const std::filesystem::path& dir) {
  const datagen::ShiftConfig shift =
      spec.domain == datagen::Domain::target ? data.shift : datagen::ShiftConfig{};
  const std::vector<datagen::DetectionSample> samples = datagen::generate_dataset(
      spec.count, data.dataset, shift, spec.domain, split_seed(data, spec.name));
  datagen::save_dataset(dir, samples, split_generation_config(data, spec.name));
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json outcome_metrics(const RunOutcome& outcome, const training::ExperimentConfig& cfg,
                               const training::TrainResult& result) {
  nlohmann::json evals = nlohmann::json::array();
  for (const training::EvalPoint& e : result.evals) {
    evals.push_back({{"iteration", e.iteration}, {"map", e.map}});
  }
  return nlohmann::json{{"format_version", 1},
                        {"version", kVersion},
                        {"status", "complete"},
                        {"run_id", outcome.id},
                        {"config", cfg.to_json()},
                        {"config_hash", cfg.hash()},
                        {"mode", to_string(cfg.train.mode)},
                        {"xi", cfg.train.xi},
                        {"seed", cfg.train.seed},
                        {"iterations", result.iterations},
                        {"best_map", outcome.best_map},
                        {"best_iteration", outcome.best_iteration},
                        {"final_map", outcome.final_map},
                        {"per_class_ap", outcome.per_class_ap},
                        {"label_reads_in_training_path", result.label_reads_in_training_path},
                        {"evals", std::move(evals)}};
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string outcome_status(const RunOutcome& o) {
  if (!o.ok) return "failed";
  return o.reused ? "reused" : "ok";
}

/** Per-group mean/std/median over the successful runs' best mAP. */
struct GroupStats {
  int runs_ok = 0;
  double mean_map = 0.0;
  double std_map = 0.0;
  double median_map = 0.0;
};

GroupStats group_stats(const std::vector<const RunOutcome*>& runs) {
  std::vector<double> maps;
  for (const RunOutcome* r : runs) {
    if (r->ok) maps.push_back(r->best_map);
  }
  GroupStats g;
  g.runs_ok = static_cast<int>(maps.size());
  if (!maps.empty()) {
    g.mean_map = mean(maps);
    g.std_map = sample_stddev(maps);
    g.median_map = median(maps);
  }
  return g;
}

}  // namespace

std::filesystem::path out_root() {
  const char* env = std::getenv("UADAN_OUT_ROOT");
  if (env != nullptr && env[0] != '\0') return std::filesystem::path(env);
  return std::filesystem::path("runs");
}

std::string run_id(const training::ExperimentConfig& cfg) {
  return to_string(cfg.train.mode) + "_xi" + format_double("%.2f", cfg.train.xi) + "_seed" +
         std::to_string(cfg.train.seed);
}

DatasetPaths dataset_paths(const std::filesystem::path& dir) {
  return DatasetPaths{dir / "source", dir / "target_train", dir / "target_eval"};
}

std::filesystem::path default_dataset_dir(const training::DataConfig& data) {
  return out_root() / "datasets" / hex16(util::fnv1a64(data_config_json(data).dump()));
}

nlohmann::json split_generation_config(const training::DataConfig& data,
                                       const std::string& split) {
  for (const SplitSpec& spec : split_specs(data)) {
    if (spec.name != split) continue;
    const datagen::ShiftConfig shift =
        spec.domain == datagen::Domain::target ? data.shift : datagen::ShiftConfig{};
    return nlohmann::json{{"split", spec.name},
                          {"count", spec.count},
                          {"domain", datagen::to_string(spec.domain)},
                          {"seed", split_seed(data, spec.name)},
                          {"dataset", datagen::dataset_config_to_json(data.dataset)},
                          {"shift", datagen::shift_to_json(shift)}};
  }
  throw std::invalid_argument("unknown dataset split: " + split);
}

void generate_datasets(const training::DataConfig& data, const std::filesystem::path& dir,
                       bool force) {
  data.validate();
  for (const SplitSpec& spec : split_specs(data)) {
    const std::filesystem::path split_dir = dir / spec.name;
    if (std::filesystem::exists(split_dir / "manifest.json")) {
      if (!force) {
        throw std::invalid_argument("gen: " + split_dir.string() +
                                    " already exists (use --force to regenerate)");
      }
      std::filesystem::remove_all(split_dir);
    }
    generate_split(data, spec, split_dir);
  }
}

DatasetBundle load_datasets(const training::DataConfig& data, const std::filesystem::path& dir) {
  DatasetBundle bundle;
  for (const SplitSpec& spec : split_specs(data)) {
    const std::filesystem::path split_dir = dir / spec.name;
    const nlohmann::json manifest = datagen::read_manifest(split_dir);
    if (!manifest.contains("generation_config") ||
        manifest["generation_config"] != split_generation_config(data, spec.name)) {
      throw std::invalid_argument("dataset: " + split_dir.string() +
                                  " was generated from a different configuration; regenerate it");
    }
    std::vector<datagen::DetectionSample> samples = datagen::load_dataset(split_dir);
    if (static_cast<int>(samples.size()) != spec.count) {
      throw std::invalid_argument("dataset: " + split_dir.string() + " has wrong sample count");
    }
    if (spec.name == "source") {
      bundle.source = std::move(samples);
    } else if (spec.name == "target_train") {
      bundle.target_train = std::move(samples);
    } else {
      bundle.target_eval = std::move(samples);
    }
  }
  return bundle;
}

DatasetBundle ensure_datasets(const training::DataConfig& data) {
  const std::filesystem::path dir = default_dataset_dir(data);
  for (const SplitSpec& spec : split_specs(data)) {
    if (!std::filesystem::exists(dir / spec.name / "manifest.json")) {
      generate_split(data, spec, dir / spec.name);
    }
  }
  return load_datasets(data, dir);
}

RunOutcome read_run_metrics(const std::filesystem::path& dir, std::uint64_t expected_hash) {
  RunOutcome outcome;
  outcome.dir = dir;
  const std::filesystem::path metrics_path = dir / "metrics.json";
  if (!std::filesystem::exists(metrics_path)) {
    outcome.error = "missing metrics";
    return outcome;
  }
  try {
    std::ifstream in(metrics_path);
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("config_hash").get<std::uint64_t>() != expected_hash) {
      outcome.error = "config hash mismatch";
      return outcome;
    }
    if (j.at("status").get<std::string>() != "complete") {
      outcome.error = "incomplete run";
      return outcome;
    }
    outcome.id = j.at("run_id").get<std::string>();
    outcome.mode = ablation_mode_from_string(j.at("mode").get<std::string>());
    outcome.xi = j.at("xi").get<double>();
    outcome.seed = j.at("seed").get<std::uint64_t>();
    outcome.best_map = j.at("best_map").get<double>();
    outcome.final_map = j.at("final_map").get<double>();
    outcome.best_iteration = j.at("best_iteration").get<int>();
    outcome.iterations = j.at("iterations").get<int>();
    outcome.per_class_ap = j.at("per_class_ap").get<std::vector<double>>();
    outcome.label_reads_in_training_path =
        j.at("label_reads_in_training_path").get<std::uint64_t>();
    outcome.ok = true;
    outcome.reused = true;
  } catch (const nlohmann::json::exception&) {
    outcome = RunOutcome{};
    outcome.dir = dir;
    outcome.error = "malformed metrics";
  }
  return outcome;
}

RunOutcome run_single(const training::ExperimentConfig& cfg, bool force) {
  cfg.validate();
  const std::string id = run_id(cfg);
  const std::filesystem::path dir = out_root() / "runs" / id;
  if (force) std::filesystem::remove_all(dir);

  if (std::filesystem::exists(dir / "metrics.json")) {
    RunOutcome cached = read_run_metrics(dir, cfg.hash());
    if (cached.ok) return cached;
    throw std::invalid_argument("run " + id + ": existing results are " + cached.error +
                                "; rerun with --force");
  }

  DatasetBundle bundle = ensure_datasets(cfg.data);
  training::Trainer trainer(cfg, std::move(bundle.source), std::move(bundle.target_train),
                            std::move(bundle.target_eval));
  const training::TrainResult result = trainer.train(dir);

  RunOutcome outcome;
  outcome.id = id;
  outcome.mode = cfg.train.mode;
  outcome.xi = cfg.train.xi;
  outcome.seed = cfg.train.seed;
  outcome.best_map = result.best_map;
  outcome.final_map = result.final_map;
  outcome.best_iteration = result.best_iteration;
  outcome.iterations = result.iterations;
  outcome.label_reads_in_training_path = result.label_reads_in_training_path;
  outcome.dir = dir;

  // Per-class AP is reported at the checkpoint the tables quote: the best one.
  const std::filesystem::path best_path = dir / "checkpoint_best.json";
  if (std::filesystem::exists(best_path)) {
    trainer.restore(training::load_checkpoint(best_path));
    const evaluation::EvalResult full = trainer.evaluate_full();
    for (const evaluation::ClassEval& ce : full.per_class) outcome.per_class_ap.push_back(ce.ap);
  }
  outcome.ok = true;

  atomic_write(dir / "metrics.json", outcome_metrics(outcome, cfg, result).dump(1) + "\n");
  return outcome;
}

AblationReport run_ablation(const training::ExperimentConfig& base,
                            const std::vector<std::uint64_t>& seeds, bool force) {
  AblationReport report;
  report.seeds = seeds;
  for (const AblationMode mode : kAllAblationModes) {
    for (const std::uint64_t seed : seeds) {
      training::ExperimentConfig cfg = base;
      cfg.train.mode = mode;
      cfg.train.seed = seed;
      try {
        report.runs.push_back(run_single(cfg, force));
      } catch (const std::exception& e) {
        RunOutcome failed;
        failed.id = run_id(cfg);
        failed.mode = mode;
        failed.xi = cfg.train.xi;
        failed.seed = seed;
        failed.error = e.what();
        report.runs.push_back(std::move(failed));
      }
    }
  }
  return report;
}

void write_ablation_outputs(const AblationReport& report, const std::filesystem::path& dir,
                            bool include_reference) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream csv;
    csv << "mode,seed,xi,best_map,final_map,best_iteration,status,error\n";
    for (const RunOutcome& r : report.runs) {
      csv << to_string(r.mode) << "," << r.seed << "," << format_double("%.2f", r.xi) << ","
          << format_double("%.6f", r.best_map) << "," << format_double("%.6f", r.final_map) << ","
          << r.best_iteration << "," << outcome_status(r) << "," << csv_safe(r.error) << "\n";
    }
    atomic_write(dir / "ablation_runs.csv", csv.str());
  }

  std::ostringstream csv;
  std::ostringstream txt;
  csv << "mode,runs,mean_map,std_map,median_map\n";
  txt << "mode            runs   mean    std  median  (mAP points, best checkpoint)\n";
  for (const AblationMode mode : kAllAblationModes) {
    std::vector<const RunOutcome*> group;
    for (const RunOutcome& r : report.runs) {
      if (r.mode == mode) group.push_back(&r);
    }
    const GroupStats g = group_stats(group);
    csv << to_string(mode) << "," << g.runs_ok << "," << format_double("%.6f", g.mean_map) << ","
        << format_double("%.6f", g.std_map) << "," << format_double("%.6f", g.median_map) << "\n";
    char line[128];
    std::snprintf(line, sizeof(line), "%-15s %4d %6.1f %6.1f %7.1f\n", to_string(mode).c_str(),
                  g.runs_ok, 100.0 * g.mean_map, 100.0 * g.std_map, 100.0 * g.median_map);
    txt << line;
  }
  if (include_reference) {
    txt << "\nPublished full-scale reference chain (annotation only; desk-scale synthetic\n"
           "numbers are not comparable to it and it is never used as a pass threshold):\n"
           "  baseline 25.8 -> image_al 29.7 -> image_ua_al 30.8 -> uadan_no_ugcl 31.5 "
           "-> uadan 32.7\n";
  }
  atomic_write(dir / "ablation.csv", csv.str());
  atomic_write(dir / "ablation.txt", txt.str());
}

SweepReport run_xi_sweep(const training::ExperimentConfig& base, const std::vector<double>& xis,
                         const std::vector<std::uint64_t>& seeds, bool force) {
  SweepReport report;
  report.xis = xis;
  report.seeds = seeds;
  bool all_zero = true;
  bool saw_zero_run = false;
  for (const double xi : xis) {
    for (const std::uint64_t seed : seeds) {
      training::ExperimentConfig cfg = base;
      cfg.train.mode = AblationMode::UaDAN;
      cfg.train.xi = xi;
      cfg.train.seed = seed;
      try {
        RunOutcome outcome = run_single(cfg, force);
        if (xi == 0.0 && outcome.ok) {
          saw_zero_run = true;
          all_zero = all_zero && history_instance_loss_all_zero(outcome.dir);
        }
        report.runs.push_back(std::move(outcome));
      } catch (const std::exception& e) {
        RunOutcome failed;
        failed.id = run_id(cfg);
        failed.mode = AblationMode::UaDAN;
        failed.xi = xi;
        failed.seed = seed;
        failed.error = e.what();
        report.runs.push_back(std::move(failed));
      }
    }
  }
  report.xi_zero_verified = saw_zero_run;
  report.xi_zero_instance_loss_zero = saw_zero_run && all_zero;
  return report;
}

void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream csv;
    csv << "xi,seed,best_map,final_map,best_iteration,status,error\n";
    for (const RunOutcome& r : report.runs) {
      csv << format_double("%.2f", r.xi) << "," << r.seed << ","
          << format_double("%.6f", r.best_map) << "," << format_double("%.6f", r.final_map) << ","
          << r.best_iteration << "," << outcome_status(r) << "," << csv_safe(r.error) << "\n";
    }
    atomic_write(dir / "sweep_xi_runs.csv", csv.str());
  }

  std::ostringstream csv;
  std::ostringstream txt;
  csv << "xi,runs,mean_map,std_map,median_map\n";
  txt << "xi     runs   mean    std  median  (mAP points, best checkpoint)\n";
  for (const double xi : report.xis) {
    std::vector<const RunOutcome*> group;
    for (const RunOutcome& r : report.runs) {
      if (r.xi == xi) group.push_back(&r);
    }
    const GroupStats g = group_stats(group);
    csv << format_double("%.2f", xi) << "," << g.runs_ok << ","
        << format_double("%.6f", g.mean_map) << "," << format_double("%.6f", g.std_map) << ","
        << format_double("%.6f", g.median_map) << "\n";
    char line[128];
    std::snprintf(line, sizeof(line), "%-6.2f %4d %6.1f %6.1f %7.1f\n", xi, g.runs_ok,
                  100.0 * g.mean_map, 100.0 * g.std_map, 100.0 * g.median_map);
    txt << line;
  }
  if (report.xi_zero_verified) {
    txt << "\nxi=0 check: instance alignment loss was "
        << (report.xi_zero_instance_loss_zero ? "identically zero" : "NOT zero (unexpected)")
        << " in every logged step of the xi=0 runs.\n";
  }
  atomic_write(dir / "sweep_xi.csv", csv.str());
  atomic_write(dir / "sweep_xi.txt", txt.str());
}

std::vector<double> default_xi_grid() { return {0.0, 0.25, 0.5, 0.75, 1.0}; }

std::vector<std::uint64_t> default_seeds() { return {1, 2, 3, 4, 5}; }

namespace {

struct HistoryCurves {
  std::vector<double> iteration, total, detection, image, instance;
  std::vector<double> eval_iteration, eval_map;
};

HistoryCurves read_history(const std::filesystem::path& run_dir) {
  const std::filesystem::path path = run_dir / "history.ndjson";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("plot: missing " + path.string());
  HistoryCurves h;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("iteration")) continue;
    h.iteration.push_back(j["iteration"].get<double>());
    h.total.push_back(j.value("loss_total", 0.0));
    h.detection.push_back(j.value("loss_detection", 0.0));
    h.image.push_back(j.value("loss_image", 0.0));
    h.instance.push_back(j.value("loss_instance", 0.0));
    if (j.contains("map")) {
      h.eval_iteration.push_back(j["iteration"].get<double>());
      h.eval_map.push_back(j["map"].get<double>());
    }
  }
  return h;
}

}  // namespace

void write_run_plots(const std::filesystem::path& run_dir) {
  const HistoryCurves h = read_history(run_dir);
  plots::PlotOptions loss_opt;
  loss_opt.title = "training loss";
  loss_opt.x_label = "iteration";
  loss_opt.y_label = "loss";
  plots::write_line_svg(run_dir / "loss_curves.svg",
                        {{"total", h.iteration, h.total, ""},
                         {"detection", h.iteration, h.detection, ""},
                         {"image", h.iteration, h.image, ""},
                         {"instance", h.iteration, h.instance, ""}},
                        loss_opt);
  if (!h.eval_map.empty()) {
    plots::PlotOptions map_opt;
    map_opt.title = "target mAP@0.5";
    map_opt.x_label = "iteration";
    map_opt.y_label = "mAP";
    map_opt.y_from_zero = true;
    plots::write_line_svg(run_dir / "map_curve.svg", {{"mAP", h.eval_iteration, h.eval_map, ""}},
                          map_opt);
  }

  // PR curves need saved detections (the eval command writes them).
  const std::filesystem::path det_path = run_dir / "detections.json";
  const std::filesystem::path metrics_path = run_dir / "metrics.json";
  if (std::filesystem::exists(det_path) && std::filesystem::exists(metrics_path)) {
    std::ifstream din(det_path);
    const std::vector<evaluation::ImageEval> images =
        evaluation::detections_from_json(nlohmann::json::parse(din));
    std::ifstream min(metrics_path);
    const nlohmann::json metrics = nlohmann::json::parse(min);
    const int classes = metrics.at("config").at("detector").at("classes").get<int>();
    write_pr_curves(run_dir / "pr_curves.svg", evaluation::evaluate(images, classes, 0.5));
  }
}

void write_pr_curves(const std::filesystem::path& path, const evaluation::EvalResult& result) {
  std::vector<plots::Series> series;
  for (const evaluation::ClassEval& ce : result.per_class) {
    plots::Series s;
    s.label = "class " + std::to_string(ce.class_id) + " (AP " + format_double("%.3f", ce.ap) + ")";
    for (const evaluation::PrPoint& p : ce.curve) {
      s.x.push_back(p.recall);
      s.y.push_back(p.precision);
    }
    series.push_back(std::move(s));
  }
  plots::PlotOptions pr_opt;
  pr_opt.title = "precision-recall";
  pr_opt.x_label = "recall";
  pr_opt.y_label = "precision";
  pr_opt.y_from_zero = true;
  plots::write_line_svg(path, series, pr_opt);
}

bool history_instance_loss_all_zero(const std::filesystem::path& run_dir) {
  const HistoryCurves h = read_history(run_dir);
  if (h.instance.empty()) return false;
  return std::all_of(h.instance.begin(), h.instance.end(), [](double v) { return v == 0.0; });
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_stddev(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace uadan::experiment
