#include "uadan/training/detection_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uadan/detector/anchors.hpp"
#include "uadan/nn/layers.hpp"

namespace uadan::training {

namespace {

double smooth_l1(double d) {
  const double a = std::fabs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) {
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

}  // namespace

AnchorMatch match_anchors(const detector::AnchorGrid& anchors,
                          const std::vector<datagen::BoxLabel>& truths, double pos_iou,
                          double neg_iou) {
  const int n = anchors.size();
  AnchorMatch match;
  match.label.assign(static_cast<std::size_t>(n), 0);
  match.gt_index.assign(static_cast<std::size_t>(n), -1);
  if (truths.empty()) return match;  // all anchors stay background

  std::vector<double> best_iou(static_cast<std::size_t>(n), 0.0);
  std::vector<int> best_gt_per_anchor(static_cast<std::size_t>(n), -1);
  std::vector<double> best_iou_per_gt(truths.size(), -1.0);
  std::vector<int> best_anchor_per_gt(truths.size(), -1);
  for (int a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < truths.size(); ++g) {
      const double v = iou(anchors.boxes[static_cast<std::size_t>(a)], truths[g].box);
      if (v > best_iou[static_cast<std::size_t>(a)]) {
        best_iou[static_cast<std::size_t>(a)] = v;
        best_gt_per_anchor[static_cast<std::size_t>(a)] = static_cast<int>(g);
      }
      if (v > best_iou_per_gt[g]) {
        best_iou_per_gt[g] = v;
        best_anchor_per_gt[g] = a;
      }
    }
  }
  for (int a = 0; a < n; ++a) {
    const std::size_t ai = static_cast<std::size_t>(a);
    if (best_iou[ai] >= pos_iou) {
      match.label[ai] = 1;
      match.gt_index[ai] = best_gt_per_anchor[ai];
    } else if (best_iou[ai] >= neg_iou) {
      match.label[ai] = -1;  // ambiguous band: ignored
    }
  }
  // Every ground truth claims its best-overlapping anchor, threshold or not.
  for (std::size_t g = 0; g < truths.size(); ++g) {
    const int a = best_anchor_per_gt[g];
    if (a >= 0) {
      match.label[static_cast<std::size_t>(a)] = 1;
      match.gt_index[static_cast<std::size_t>(a)] = static_cast<int>(g);
    }
  }
  return match;
}

SampledAnchors sample_anchors(const AnchorMatch& match, int batch, util::Rng& rng) {
  std::vector<int> pos_candidates;
  std::vector<int> neg_candidates;
  for (std::size_t a = 0; a < match.label.size(); ++a) {
    if (match.label[a] == 1) {
      pos_candidates.push_back(static_cast<int>(a));
    } else if (match.label[a] == 0) {
      neg_candidates.push_back(static_cast<int>(a));
    }
  }
  rng.shuffle(pos_candidates);
  rng.shuffle(neg_candidates);
  SampledAnchors out;
  const int max_pos = batch / 2;
  const int n_pos = std::min<int>(static_cast<int>(pos_candidates.size()), max_pos);
  out.pos.assign(pos_candidates.begin(), pos_candidates.begin() + n_pos);
  const int n_neg = std::min<int>(static_cast<int>(neg_candidates.size()), batch - n_pos);
  out.neg.assign(neg_candidates.begin(), neg_candidates.begin() + n_neg);
  // Sorted order keeps downstream accumulation independent of shuffle details.
  std::sort(out.pos.begin(), out.pos.end());
  std::sort(out.neg.begin(), out.neg.end());
  return out;
}

DetectionLossResult compute_detection_loss(const detector::ProposalMap& pm,
                                           const detector::AnchorGrid& anchors,
                                           const std::vector<detector::Proposal>& proposals,
                                           const detector::RcnnOutputs& rcnn,
                                           const std::vector<datagen::BoxLabel>& truths,
                                           const TrainConfig& tcfg, double eps, util::Rng& rng,
                                           DetectionLossGrads* grads) {
  DetectionLossResult res;
  if (grads != nullptr) {
    grads->rpn_dlogits = Eigen::MatrixXd::Zero(pm.logits.rows(), pm.logits.cols());
    grads->rpn_ddeltas = Eigen::MatrixXd::Zero(pm.deltas.rows(), pm.deltas.cols());
    grads->rcnn_dlogits = Eigen::MatrixXd::Zero(rcnn.class_logits.rows(), rcnn.class_logits.cols());
    grads->rcnn_ddeltas = Eigen::MatrixXd::Zero(rcnn.deltas.rows(), rcnn.deltas.cols());
  }

  // --- RPN: objectness + box regression over a balanced anchor sample ---
  const AnchorMatch match = match_anchors(anchors, truths, tcfg.anchor_pos_iou, tcfg.anchor_neg_iou);
  const SampledAnchors sampled = sample_anchors(match, tcfg.anchor_batch, rng);
  res.sampled_pos = static_cast<int>(sampled.pos.size());
  res.sampled_neg = static_cast<int>(sampled.neg.size());
  const int n_cls = res.sampled_pos + res.sampled_neg;
  if (n_cls > 0) {
    auto accumulate_cls = [&](const std::vector<int>& idxs, double label) {
      for (int a : idxs) {
        const int loc = a / anchors.r;
        const int ri = a % anchors.r;
        const double p = pm.objectness(ri, loc);
        res.rpn_cls += -label * std::log(std::max(p, eps)) -
                       (1.0 - label) * std::log(std::max(1.0 - p, eps));
        if (grads != nullptr) {
          grads->rpn_dlogits(ri, loc) += (p - label) / static_cast<double>(n_cls);
        }
      }
    };
    accumulate_cls(sampled.pos, 1.0);
    accumulate_cls(sampled.neg, 0.0);
    res.rpn_cls /= static_cast<double>(n_cls);
  }
  if (res.sampled_pos > 0) {
    for (int a : sampled.pos) {
      const int loc = a / anchors.r;
      const int ri = a % anchors.r;
      const int g = match.gt_index[static_cast<std::size_t>(a)];
      const auto target =
          detector::encode_box(anchors.boxes[static_cast<std::size_t>(a)], truths[static_cast<std::size_t>(g)].box);
      for (int k = 0; k < 4; ++k) {
        const double d = pm.deltas(ri * 4 + k, loc) - target[static_cast<std::size_t>(k)];
        res.rpn_box += smooth_l1(d);
        if (grads != nullptr) {
          grads->rpn_ddeltas(ri * 4 + k, loc) += smooth_l1_grad(d) / static_cast<double>(res.sampled_pos);
        }
      }
    }
    res.rpn_box /= static_cast<double>(res.sampled_pos);
  }

  // --- RCNN: class cross-entropy + box refinement over retained proposals ---
  const int n_props = static_cast<int>(proposals.size());
  if (n_props > 0) {
    if (rcnn.class_probs.cols() != n_props || rcnn.deltas.cols() != n_props) {
      throw std::invalid_argument("compute_detection_loss: RCNN outputs do not match proposals");
    }
    std::vector<int> prop_class(static_cast<std::size_t>(n_props), 0);
    std::vector<int> prop_gt(static_cast<std::size_t>(n_props), -1);
    for (int i = 0; i < n_props; ++i) {
      double best = 0.0;
      int best_g = -1;
      for (std::size_t g = 0; g < truths.size(); ++g) {
        const double v = iou(proposals[static_cast<std::size_t>(i)].box, truths[g].box);
        if (v > best) {
          best = v;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0 && best >= tcfg.proposal_fg_iou) {
        prop_class[static_cast<std::size_t>(i)] = truths[static_cast<std::size_t>(best_g)].class_id;
        prop_gt[static_cast<std::size_t>(i)] = best_g;
        ++res.fg_proposals;
      }
    }
    for (int i = 0; i < n_props; ++i) {
      const int target = prop_class[static_cast<std::size_t>(i)];
      res.rcnn_cls += -std::log(std::max(rcnn.class_probs(target, i), eps));
      if (grads != nullptr) {
        for (Eigen::Index c = 0; c < rcnn.class_probs.rows(); ++c) {
          const double onehot = c == target ? 1.0 : 0.0;
          grads->rcnn_dlogits(c, i) += (rcnn.class_probs(c, i) - onehot) / static_cast<double>(n_props);
        }
      }
    }
    res.rcnn_cls /= static_cast<double>(n_props);
    if (res.fg_proposals > 0) {
      for (int i = 0; i < n_props; ++i) {
        const int g = prop_gt[static_cast<std::size_t>(i)];
        if (g < 0) continue;
        const auto target = detector::encode_box(proposals[static_cast<std::size_t>(i)].box,
                                                 truths[static_cast<std::size_t>(g)].box);
        for (int k = 0; k < 4; ++k) {
          const double d = rcnn.deltas(k, i) - target[static_cast<std::size_t>(k)];
          res.rcnn_box += smooth_l1(d);
          if (grads != nullptr) {
            grads->rcnn_ddeltas(k, i) += smooth_l1_grad(d) / static_cast<double>(res.fg_proposals);
          }
        }
      }
      res.rcnn_box /= static_cast<double>(res.fg_proposals);
    }
  }

  res.total = res.rpn_cls + res.rpn_box + res.rcnn_cls + res.rcnn_box;
  return res;
}

}  // namespace uadan::training
