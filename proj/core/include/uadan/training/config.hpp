#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "uadan/ablation_mode.hpp"
#include "uadan/datagen/datagen.hpp"
#include "uadan/detector/detector.hpp"
#include "uadan/uncertainty/entropy.hpp"

namespace uadan::training {

/** Two-phase SGD schedule: a high-rate phase followed by a decayed phase. */
struct OptimConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_initial = 1e-3;
  double lr_final = 1e-4;
  int iters_initial = 5000;
  int iters_final = 2000;

  int total_iters() const { return iters_initial + iters_final; }
  double lr_at(int iter) const { return iter < iters_initial ? lr_initial : lr_final; }
  void validate() const;
};

struct TrainConfig {
  AblationMode mode = AblationMode::UaDAN;
  double xi = 0.5;          // curriculum gate threshold
  double grl_lambda = 1.0;  // gradient-reversal strength
  uncertainty::EntropyReduction instance_entropy_reduction = uncertainty::EntropyReduction::mean;
  OptimConfig optim;
  int eval_every = 500;    // evaluation + checkpoint cadence (iterations)
  int history_every = 50;  // loss-history cadence (iterations)
  int anchor_batch = 64;   // sampled anchors per image for the RPN loss
  double anchor_pos_iou = 0.5;
  double anchor_neg_iou = 0.3;
  double proposal_fg_iou = 0.5;  // proposal-to-truth IoU for a foreground RCNN target
  std::uint64_t seed = 1;

  void validate() const;
};

struct DataConfig {
  datagen::DatasetConfig dataset;
  datagen::ShiftConfig shift;  // appearance gap applied to the target domain
  int train_source = 500;
  int train_target = 500;
  int eval_target = 200;
  std::uint64_t data_seed = 9001;  // dataset seeds derive from this, not the run seed

  void validate() const;
};

struct ExperimentConfig {
  DataConfig data;
  detector::DetectorConfig detector;
  TrainConfig train;

  /** The calibrated default benchmark (moderate, learnable domain gap). */
  static ExperimentConfig defaults();

  void validate() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  /** Canonical serialized form (sorted keys); the basis of the config hash. */
  std::string canonical_dump() const;
  std::uint64_t hash() const;
};

}  // namespace uadan::training
