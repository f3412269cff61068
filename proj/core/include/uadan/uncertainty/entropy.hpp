#pragma once

#include <Eigen/Dense>
#include <string>

#include "uadan/boxes.hpp"
#include "uadan/detector/detector.hpp"

namespace uadan::uncertainty {

/** How the per-cell entropy map is reduced over an instance's footprint. */
enum class EntropyReduction { mean, min, max };

std::string to_string(EntropyReduction r);
EntropyReduction entropy_reduction_from_string(const std::string& s);

/**
 * Binary entropy in nats. Probabilities are floored by eps inside the
 * logarithms only, so H(0) and H(1) are exactly zero and H(0.5) is ln 2.
 */
double binary_entropy(double p, double eps = 1e-7);

/** Entropy in nats of a categorical distribution; validates the simplex. */
double categorical_entropy(const Eigen::VectorXd& dist, double eps = 1e-7);

/** Per-location proposal uncertainty over the feature grid. */
struct EntropyMap {
  int u = 0;
  int v = 0;
  Eigen::VectorXd values;  // u*v entries, scanline order
};

/**
 * Proposal-stage uncertainty at each location: the minimum binary entropy of
 * the objectness scores across the anchors there. One confident anchor is
 * enough to call the location certain.
 */
EntropyMap proposal_entropy_map(const detector::ProposalMap& pm, double eps = 1e-7);

/**
 * Aggregate proposal-stage uncertainty over one instance: the entropy map is
 * ROI-pooled over the instance's box footprint and reduced to a scalar.
 */
double instance_proposal_entropy(const EntropyMap& map, const Box& box_pixels, int roi_size,
                                 int stride, EntropyReduction reduction = EntropyReduction::mean);

struct GateConfig {
  double xi = 0.5;  // curriculum threshold on proposal-stage entropy

  void validate() const;
};

/**
 * Curriculum gate for instance alignment: an instance participates, weighted
 * by its detection-stage entropy, only once its proposal-stage entropy has
 * dropped strictly below xi; otherwise its weight is zero. With xi = 0 the
 * gate never opens; with xi > ln 2 it is always open.
 */
double gate_weight(double detection_entropy, double instance_entropy, const GateConfig& gate);

}  // namespace uadan::uncertainty
