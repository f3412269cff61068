#include "uadan/adaptation/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace uadan::adaptation {

double weighted_domain_bce(const Eigen::VectorXd& probs, double label,
                           const Eigen::VectorXd& weights, double eps,
                           Eigen::VectorXd* dlogits) {
  if (probs.size() != weights.size()) {
    throw std::invalid_argument("weighted_domain_bce: weight/prediction size mismatch");
  }
  const Eigen::Index n = probs.size();
  if (n == 0) {
    if (dlogits != nullptr) dlogits->resize(0);
    return 0.0;
  }
  double loss = 0.0;
  if (dlogits != nullptr) dlogits->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = probs(i);
    const double ce = -label * std::log(std::max(p, eps)) -
                      (1.0 - label) * std::log(std::max(1.0 - p, eps));
    loss += weights(i) * ce;
    if (dlogits != nullptr) {
      (*dlogits)(i) = weights(i) * (p - label) / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

namespace {

/** Shared kernel: one weighted BCE per domain, summed. */
double paired_domain_loss(const DomainPrediction& source, const Eigen::VectorXd& w_source,
                          const DomainPrediction& target, const Eigen::VectorXd& w_target,
                          double eps, PairGrads* grads) {
  Eigen::VectorXd* ds = grads != nullptr ? &grads->d_source : nullptr;
  Eigen::VectorXd* dt = grads != nullptr ? &grads->d_target : nullptr;
  return weighted_domain_bce(source.probs, kSourceLabel, w_source, eps, ds) +
         weighted_domain_bce(target.probs, kTargetLabel, w_target, eps, dt);
}

}  // namespace

double image_al_loss(const DomainPrediction& source, const DomainPrediction& target, double eps,
                     PairGrads* grads) {
  return paired_domain_loss(source, Eigen::VectorXd::Ones(source.size()), target,
                            Eigen::VectorXd::Ones(target.size()), eps, grads);
}

double image_ua_loss(const uncertainty::EntropyMap& entropy_source,
                     const DomainPrediction& source,
                     const uncertainty::EntropyMap& entropy_target,
                     const DomainPrediction& target, double eps, PairGrads* grads) {
  if (entropy_source.values.size() != source.size() ||
      entropy_target.values.size() != target.size()) {
    throw std::invalid_argument("image_ua_loss: entropy map does not match predictions");
  }
  return paired_domain_loss(source, entropy_source.values, target, entropy_target.values, eps,
                            grads);
}

double instance_al_loss(const DomainPrediction& source, const DomainPrediction& target, double eps,
                        PairGrads* grads) {
  return paired_domain_loss(source, Eigen::VectorXd::Ones(source.size()), target,
                            Eigen::VectorXd::Ones(target.size()), eps, grads);
}

double instance_ua_loss(const Eigen::VectorXd& det_entropy_source, const DomainPrediction& source,
                        const Eigen::VectorXd& det_entropy_target, const DomainPrediction& target,
                        double eps, PairGrads* grads) {
  return paired_domain_loss(source, det_entropy_source, target, det_entropy_target, eps, grads);
}

double instance_ug_loss(const Eigen::VectorXd& det_entropy_source,
                        const Eigen::VectorXd& ins_entropy_source, const DomainPrediction& source,
                        const Eigen::VectorXd& det_entropy_target,
                        const Eigen::VectorXd& ins_entropy_target, const DomainPrediction& target,
                        const uncertainty::GateConfig& gate, double eps, PairGrads* grads) {
  if (det_entropy_source.size() != ins_entropy_source.size() ||
      det_entropy_target.size() != ins_entropy_target.size()) {
    throw std::invalid_argument("instance_ug_loss: entropy vector size mismatch");
  }
  gate.validate();
  Eigen::VectorXd w_source(det_entropy_source.size());
  for (Eigen::Index i = 0; i < w_source.size(); ++i) {
    w_source(i) = uncertainty::gate_weight(det_entropy_source(i), ins_entropy_source(i), gate);
  }
  Eigen::VectorXd w_target(det_entropy_target.size());
  for (Eigen::Index i = 0; i < w_target.size(); ++i) {
    w_target(i) = uncertainty::gate_weight(det_entropy_target(i), ins_entropy_target(i), gate);
  }
  return paired_domain_loss(source, w_source, target, w_target, eps, grads);
}

LossBreakdown total_loss(AblationMode mode, double detection, const AdversarialTerms& terms) {
  LossBreakdown out;
  out.detection = detection;
  if (uses_image_alignment(mode)) {
    out.image = image_alignment_weighted(mode) ? terms.image_ua : terms.image_al;
  }
  switch (instance_weighting(mode)) {
    case InstanceWeighting::none: break;
    case InstanceWeighting::plain: out.instance = terms.instance_al; break;
    case InstanceWeighting::entropy: out.instance = terms.instance_ua; break;
    case InstanceWeighting::gated: out.instance = terms.instance_ug; break;
  }
  out.total = out.detection + out.image + out.instance;
  return out;
}

}  // namespace uadan::adaptation
