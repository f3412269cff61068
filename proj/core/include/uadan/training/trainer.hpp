#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <vector>

#include "uadan/adaptation/domain_classifiers.hpp"
#include "uadan/adaptation/losses.hpp"
#include "uadan/datagen/datagen.hpp"
#include "uadan/detector/detector.hpp"
#include "uadan/evaluation/evaluation.hpp"
#include "uadan/nn/sgd.hpp"
#include "uadan/training/checkpoint.hpp"
#include "uadan/training/config.hpp"
#include "uadan/training/detection_loss.hpp"

namespace uadan::training {

/** Thrown when the objective stops being finite. */
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/** Score floor used when collecting detections for PR curves / AP. */
inline constexpr double kApCollectionThreshold = 0.05;

/** Per-step diagnostics. */
struct StepBreakdown {
  adaptation::LossBreakdown loss;
  DetectionLossResult detection;
  int source_instances = 0;
  int target_instances = 0;
  double gate_open_source = 0.0;  // fraction of source instances the gate admits
  double gate_open_target = 0.0;
};

struct EvalPoint {
  int iteration = 0;
  double map = 0.0;
};

struct TrainResult {
  double best_map = 0.0;
  int best_iteration = -1;
  double final_map = 0.0;
  int iterations = 0;
  bool resumed = false;
  // Target-domain label reads attributable to the optimization path (the
  // periodic evaluations are excluded); must be zero for a correct trainer.
  std::uint64_t label_reads_in_training_path = 0;
  std::vector<EvalPoint> evals;
};

/**
 * End-to-end training loop for one configuration: interleaves one source and
 * one target image per iteration, runs the supervised detection loss plus the
 * mode's adversarial terms through a single backward pass (gradient reversal
 * folds the minimax into one step), follows the two-phase learning-rate
 * schedule, evaluates periodically on the held-out target split, and
 * checkpoints both the latest and the best state.
 */
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::vector<datagen::DetectionSample> train_source,
          std::vector<datagen::DetectionSample> train_target,
          std::vector<datagen::DetectionSample> eval_target);

  /** One optimization step; advances all parameters. */
  StepBreakdown train_step(const datagen::DetectionSample& source,
                           const datagen::DetectionSample& target, double lr);

  /** Full schedule with history, evaluation and checkpoints under run_dir.
   *  Resumes from checkpoint_last.json when present and config-compatible. */
  TrainResult train(const std::filesystem::path& run_dir);

  /** Target-split mAP at IoU 0.5 with the current parameters. */
  double evaluate_map();
  evaluation::EvalResult evaluate_full();

  detector::TwoStageDetector& model() { return model_; }
  adaptation::ImageDomainClassifier& image_classifier() { return image_cls_; }
  adaptation::InstanceDomainClassifier& instance_classifier() { return instance_cls_; }
  const ExperimentConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

 private:
  struct ForwardPass;

  void forward_domain(const datagen::DetectionSample& sample, bool want_instances,
                      bool want_rcnn, bool want_entropy_map, ForwardPass& fp);
  int next_index(std::vector<int>& perm, int& cursor, util::Rng& rng);
  void replay_data_order(int iteration);

  ExperimentConfig cfg_;
  std::vector<datagen::DetectionSample> train_source_;
  std::vector<datagen::DetectionSample> train_target_;
  std::vector<datagen::DetectionSample> eval_target_;

  detector::TwoStageDetector model_;
  adaptation::ImageDomainClassifier image_cls_;
  adaptation::InstanceDomainClassifier instance_cls_;
  std::unique_ptr<nn::SgdOptimizer> optimizer_;

  util::Rng anchor_rng_;
  util::Rng dropout_rng_;
  util::Rng source_order_rng_;
  util::Rng target_order_rng_;
  std::vector<int> source_perm_;
  std::vector<int> target_perm_;
  int source_cursor_ = 0;
  int target_cursor_ = 0;

  int iteration_ = 0;
  double best_map_ = -1.0;
  int best_iteration_ = -1;
};

}  // namespace uadan::training
