#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uadan/datagen/datagen.hpp"
#include "uadan/training/config.hpp"
#include "uadan/training/trainer.hpp"

namespace uadan::experiment {

/** Stamped into metrics files so results can be traced to a code revision. */
inline constexpr const char* kVersion = "0.1.0";

/** Output root: $UADAN_OUT_ROOT when set, otherwise ./runs. */
std::filesystem::path out_root();

/** Stable run directory name, e.g. "uadan_xi0.50_seed3". */
std::string run_id(const training::ExperimentConfig& cfg);

struct DatasetBundle {
  std::vector<datagen::DetectionSample> source;
  std::vector<datagen::DetectionSample> target_train;
  std::vector<datagen::DetectionSample> target_eval;
};

/** The three split directories under one dataset root. */
struct DatasetPaths {
  std::filesystem::path source;
  std::filesystem::path target_train;
  std::filesystem::path target_eval;
};
DatasetPaths dataset_paths(const std::filesystem::path& dir);

/** Where datasets for this data config live by default (content-addressed). */
std::filesystem::path default_dataset_dir(const training::DataConfig& data);

/** The manifest-embedded generation record for one split of this config. */
nlohmann::json split_generation_config(const training::DataConfig& data, const std::string& split);

/**
 * Write source/, target_train/, target_eval/ under dir. Existing split
 * directories are refused unless force is set.
 */
void generate_datasets(const training::DataConfig& data, const std::filesystem::path& dir,
                       bool force);

/**
 * Load the three splits from dir, verifying that each manifest was generated
 * from exactly this data config; any drift is an error raised before training
 * can start.
 */
DatasetBundle load_datasets(const training::DataConfig& data, const std::filesystem::path& dir);

/** Load from the default location, generating first if absent. */
DatasetBundle ensure_datasets(const training::DataConfig& data);

/** Summary of one training run (possibly reused from a completed directory). */
struct RunOutcome {
  std::string id;
  AblationMode mode = AblationMode::Baseline;
  double xi = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  bool reused = false;
  std::string error;
  double best_map = 0.0;
  double final_map = 0.0;
  int best_iteration = -1;
  int iterations = 0;
  std::vector<double> per_class_ap;  // at the best checkpoint
  std::uint64_t label_reads_in_training_path = 0;
  std::filesystem::path dir;
};

/**
 * Train one configuration under out_root()/runs/<run_id>, or reuse the
 * directory when it already holds completed metrics for the identical config
 * hash. force discards any existing directory first. Exceptions from invalid
 * configs or diverged training propagate to the caller.
 */
RunOutcome run_single(const training::ExperimentConfig& cfg, bool force);

/** Read back a completed run's metrics.json; ok=false when absent/stale. */
RunOutcome read_run_metrics(const std::filesystem::path& dir, std::uint64_t expected_hash);

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<RunOutcome> runs;  // mode-major, seed-minor; failures recorded inline
};

/**
 * The full mode grid (all seven ablation modes x seeds) at the base config's
 * xi. A failing run is recorded with its error and the grid continues.
 */
AblationReport run_ablation(const training::ExperimentConfig& base,
                            const std::vector<std::uint64_t>& seeds, bool force);

void write_ablation_outputs(const AblationReport& report, const std::filesystem::path& dir,
                            bool include_reference);

struct SweepReport {
  std::vector<double> xis;
  std::vector<std::uint64_t> seeds;
  std::vector<RunOutcome> runs;  // xi-major, seed-minor
  bool xi_zero_verified = false;       // a xi=0 run exists with clean history
  bool xi_zero_instance_loss_zero = false;  // its instance loss was 0 in every record
};

/** Full-method runs across the gate-threshold grid. */
SweepReport run_xi_sweep(const training::ExperimentConfig& base, const std::vector<double>& xis,
                         const std::vector<std::uint64_t>& seeds, bool force);

void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir);

/** Default protocol grids. */
std::vector<double> default_xi_grid();
std::vector<std::uint64_t> default_seeds();

/** Loss/mAP curves rendered from a run directory's history file. */
void write_run_plots(const std::filesystem::path& run_dir);

/** Per-class precision-recall curves as one SVG. */
void write_pr_curves(const std::filesystem::path& path, const evaluation::EvalResult& result);

/** True when every history record of the run has loss_instance == 0. */
bool history_instance_loss_all_zero(const std::filesystem::path& run_dir);

double median(std::vector<double> values);
double mean(const std::vector<double>& values);
double sample_stddev(const std::vector<double>& values);

}  // namespace uadan::experiment
