#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uadan/datagen/datagen.hpp"
#include "uadan/detector/detector.hpp"

namespace uadan::evaluation {

/** One image's detections next to its ground truth. */
struct ImageEval {
  std::vector<detector::DetectionResult> detections;
  std::vector<datagen::BoxLabel> truths;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;
};

struct ClassEval {
  int class_id = 0;
  int gt_count = 0;
  int tp = 0;
  int fp = 0;
  double ap = 0.0;
  std::vector<PrPoint> curve;  // one point per ranked detection
};

struct EvalResult {
  double map = 0.0;
  std::vector<ClassEval> per_class;
};

/**
 * Average precision per class at one IoU threshold, and their mean over the
 * classes that have ground truth. Detections are ranked globally (score desc,
 * larger area first, then input order) and each greedily claims the
 * highest-IoU unmatched truth of its class in its image. AP integrates the
 * precision envelope over all recall points. No ground truth at all is an
 * error.
 */
EvalResult evaluate(const std::vector<ImageEval>& images, int classes, double iou_threshold);

/**
 * Hoiem-style decomposition of already-thresholded detections. Every
 * detection lands in exactly one bucket and every truth is either correctly
 * found or missed, so:
 *
 *   det_total == correct + duplicates + misclassified + mislocalized + background
 *   gt_total  == correct + missed
 */
struct ErrorBuckets {
  int gt_total = 0;
  int det_total = 0;
  int correct = 0;
  int duplicates = 0;      // extra hits on an already-matched truth
  int misclassified = 0;   // well-localized, wrong class
  int mislocalized = 0;    // overlaps a truth loosely (IoU in [loc_iou, fg_iou))
  int background = 0;      // no meaningful overlap with any truth
  int missed = 0;
  double precision = 0.0;  // correct / det_total (0 when undefined)
  double recall = 0.0;     // correct / gt_total (0 when undefined)
  bool has_detections = false;
  bool has_truths = false;
};

ErrorBuckets error_buckets(const std::vector<ImageEval>& images, double fg_iou = 0.5,
                           double loc_iou = 0.1);

/**
 * How an adapted model's hits and misses relate to a baseline's on the same
 * ground truth. Every truth is classified by which of the two runs found it
 * (same greedy class-aware matching as AP), so the counts obey
 *
 *   recovered + both_matched == adapted_matched
 *   induced  + both_matched == baseline_matched
 *
 * recovered_tp_rate is the fraction of the baseline's misses that the adapted
 * model finds; induced_fn_rate is the fraction of the baseline's hits that it
 * loses. A zero denominator yields rate 0 with the matching flag cleared.
 */
struct ErrorAnalysis {
  int gt_total = 0;
  int baseline_matched = 0;
  int adapted_matched = 0;
  int both_matched = 0;
  int recovered = 0;  // found by adapted, missed by baseline
  int induced = 0;    // found by baseline, missed by adapted
  double recovered_tp_rate = 0.0;  // recovered / (gt_total - baseline_matched)
  double induced_fn_rate = 0.0;    // induced / baseline_matched
  bool recovered_rate_defined = false;
  bool induced_rate_defined = false;
};

ErrorAnalysis error_analysis(const std::vector<ImageEval>& baseline,
                             const std::vector<ImageEval>& adapted, double iou_threshold = 0.5);

/**
 * Law-of-total-variance split of labeled feature vectors: population variance
 * (squared distance to the mean, averaged over samples) decomposed into
 * within-class and between-class parts; within + between == total. Classes
 * larger than per_class_cap are subsampled with the given seed. Fewer than
 * two classes present is an error.
 */
struct ClassVariance {
  double within = 0.0;
  double between = 0.0;
  double total = 0.0;
  int classes_used = 0;
  int samples_used = 0;
};

ClassVariance class_variance(const std::vector<std::pair<int, Eigen::VectorXd>>& features,
                             int per_class_cap, std::uint64_t seed);

/** Detections + truths interchange format (JSON). */
nlohmann::json detections_to_json(const std::vector<ImageEval>& images);
std::vector<ImageEval> detections_from_json(const nlohmann::json& j);

}  // namespace uadan::evaluation
