#pragma once

#include <Eigen/Dense>
#include <vector>

#include "uadan/datagen/datagen.hpp"
#include "uadan/detector/detector.hpp"
#include "uadan/training/config.hpp"
#include "uadan/util/rng.hpp"

namespace uadan::training {

/** Per-anchor supervision: +1 object, 0 background, -1 ignored. */
struct AnchorMatch {
  std::vector<int> label;
  std::vector<int> gt_index;  // matched ground-truth index for positives, else -1
};

/**
 * IoU-based anchor assignment: anchors above pos_iou are positive, below
 * neg_iou negative, in between ignored. Additionally the highest-IoU anchor
 * of every ground-truth box is forced positive, so small objects that clear
 * no threshold still receive a learning signal.
 */
AnchorMatch match_anchors(const detector::AnchorGrid& anchors,
                          const std::vector<datagen::BoxLabel>& truths, double pos_iou,
                          double neg_iou);

struct SampledAnchors {
  std::vector<int> pos;
  std::vector<int> neg;
};

/**
 * Balanced minibatch of anchors: up to batch/2 positives, negatives fill the
 * remainder up to batch. Selection among candidates is a seeded shuffle.
 */
SampledAnchors sample_anchors(const AnchorMatch& match, int batch, util::Rng& rng);

struct DetectionLossGrads {
  Eigen::MatrixXd rpn_dlogits;   // (r, u*v)
  Eigen::MatrixXd rpn_ddeltas;   // (4r, u*v)
  Eigen::MatrixXd rcnn_dlogits;  // (C+1, n)
  Eigen::MatrixXd rcnn_ddeltas;  // (4, n)
};

struct DetectionLossResult {
  double total = 0.0;
  double rpn_cls = 0.0;
  double rpn_box = 0.0;
  double rcnn_cls = 0.0;
  double rcnn_box = 0.0;
  int sampled_pos = 0;
  int sampled_neg = 0;
  int fg_proposals = 0;
};

/**
 * Supervised detection loss on one labeled image: RPN objectness BCE and box
 * regression over a sampled anchor batch, plus RCNN cross-entropy and box
 * refinement over the retained proposals. All four pieces are mean-reduced
 * over their own support.
 */
DetectionLossResult compute_detection_loss(const detector::ProposalMap& pm,
                                           const detector::AnchorGrid& anchors,
                                           const std::vector<detector::Proposal>& proposals,
                                           const detector::RcnnOutputs& rcnn,
                                           const std::vector<datagen::BoxLabel>& truths,
                                           const TrainConfig& tcfg, double eps, util::Rng& rng,
                                           DetectionLossGrads* grads = nullptr);

}  // namespace uadan::training
