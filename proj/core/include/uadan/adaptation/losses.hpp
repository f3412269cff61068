#pragma once

#include <Eigen/Dense>

#include "uadan/ablation_mode.hpp"
#include "uadan/adaptation/domain_classifiers.hpp"
#include "uadan/uncertainty/entropy.hpp"

namespace uadan::adaptation {

/** Domain labels for the adversarial game: source = 0, target = 1. */
inline constexpr double kSourceLabel = 0.0;
inline constexpr double kTargetLabel = 1.0;

/**
 * Weighted binary cross-entropy against a constant domain label, averaged
 * over entries; probabilities are floored by eps inside the logs. Weights are
 * treated as constants (no gradient flows through them). The optional output
 * receives dLoss/dlogit = w_i * (p_i - label) / n. An empty prediction vector
 * contributes zero loss and no gradient.
 */
double weighted_domain_bce(const Eigen::VectorXd& probs, double label,
                           const Eigen::VectorXd& weights, double eps,
                           Eigen::VectorXd* dlogits = nullptr);

struct PairGrads {
  Eigen::VectorXd d_source;
  Eigen::VectorXd d_target;
};

/** Plain image-level adversarial loss: every location weighted equally. */
double image_al_loss(const DomainPrediction& source, const DomainPrediction& target, double eps,
                     PairGrads* grads = nullptr);

/**
 * Uncertainty-aware image-level loss: each location's cross-entropy is scaled
 * by the proposal-stage entropy there, steering alignment toward regions the
 * detector is still unsure about.
 */
double image_ua_loss(const uncertainty::EntropyMap& entropy_source,
                     const DomainPrediction& source,
                     const uncertainty::EntropyMap& entropy_target,
                     const DomainPrediction& target, double eps, PairGrads* grads = nullptr);

/** Plain instance-level alignment: every proposal weighted equally. */
double instance_al_loss(const DomainPrediction& source, const DomainPrediction& target, double eps,
                        PairGrads* grads = nullptr);

/** Instance-level alignment weighted by detection-stage entropy (no gate). */
double instance_ua_loss(const Eigen::VectorXd& det_entropy_source, const DomainPrediction& source,
                        const Eigen::VectorXd& det_entropy_target, const DomainPrediction& target,
                        double eps, PairGrads* grads = nullptr);

/**
 * Gated curriculum instance alignment: a proposal contributes its
 * detection-entropy weight only once its proposal-stage entropy is below the
 * gate threshold. With the gate always open (xi > ln 2) this reduces exactly
 * to instance_ua_loss; with xi = 0 it is identically zero.
 */
double instance_ug_loss(const Eigen::VectorXd& det_entropy_source,
                        const Eigen::VectorXd& ins_entropy_source, const DomainPrediction& source,
                        const Eigen::VectorXd& det_entropy_target,
                        const Eigen::VectorXd& ins_entropy_target, const DomainPrediction& target,
                        const uncertainty::GateConfig& gate, double eps,
                        PairGrads* grads = nullptr);

/** All adversarial term values computed for one step (unused ones stay 0). */
struct AdversarialTerms {
  double image_al = 0.0;
  double image_ua = 0.0;
  double instance_al = 0.0;
  double instance_ua = 0.0;
  double instance_ug = 0.0;
};

struct LossBreakdown {
  double detection = 0.0;
  double image = 0.0;
  double instance = 0.0;
  double total = 0.0;
};

/** Combine detection and adversarial terms according to the ablation mode. */
LossBreakdown total_loss(AblationMode mode, double detection, const AdversarialTerms& terms);

}  // namespace uadan::adaptation
