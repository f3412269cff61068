#include "uadan/uncertainty/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadan::uncertainty {

std::string to_string(EntropyReduction r) {
  switch (r) {
    case EntropyReduction::mean: return "mean";
    case EntropyReduction::min: return "min";
    case EntropyReduction::max: return "max";
  }
  throw std::logic_error("to_string: unknown entropy reduction");
}

EntropyReduction entropy_reduction_from_string(const std::string& s) {
  if (s == "mean") return EntropyReduction::mean;
  if (s == "min") return EntropyReduction::min;
  if (s == "max") return EntropyReduction::max;
  throw std::invalid_argument("unknown entropy reduction: " + s);
}

double binary_entropy(double p, double eps) {
  if (p < -1e-12 || p > 1.0 + 1e-12) {
    throw std::invalid_argument("binary_entropy: probability outside [0,1]");
  }
  p = std::clamp(p, 0.0, 1.0);
  return -p * std::log(std::max(p, eps)) - (1.0 - p) * std::log(std::max(1.0 - p, eps));
}

double categorical_entropy(const Eigen::VectorXd& dist, double eps) {
  if (dist.size() == 0) throw std::invalid_argument("categorical_entropy: empty distribution");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    if (dist(i) < -1e-12) throw std::invalid_argument("categorical_entropy: invalid distribution");
    sum += dist(i);
  }
  if (std::fabs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("categorical_entropy: invalid distribution");
  }
  double h = 0.0;
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    const double p = std::max(dist(i), 0.0);
    h -= p * std::log(std::max(p, eps));
  }
  return h;
}

EntropyMap proposal_entropy_map(const detector::ProposalMap& pm, double eps) {
  EntropyMap map;
  map.u = pm.u;
  map.v = pm.v;
  map.values.resize(pm.u * pm.v);
  for (int j = 0; j < pm.u * pm.v; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int ri = 0; ri < pm.r; ++ri) {
      best = std::min(best, binary_entropy(pm.objectness(ri, j), eps));
    }
    map.values(j) = best;
  }
  return map;
}

double instance_proposal_entropy(const EntropyMap& map, const Box& box_pixels, int roi_size,
                                 int stride, EntropyReduction reduction) {
  Tensor3 grid(1, map.u, map.v);
  grid.data.row(0) = map.values.transpose();
  const Tensor3 pooled = detector::roi_pool(grid, box_pixels, roi_size, stride);
  switch (reduction) {
    case EntropyReduction::mean: return pooled.data.mean();
    case EntropyReduction::min: return pooled.data.minCoeff();
    case EntropyReduction::max: return pooled.data.maxCoeff();
  }
  throw std::logic_error("instance_proposal_entropy: unknown reduction");
}

void GateConfig::validate() const {
  if (xi < 0.0 || xi > 2.0) throw std::invalid_argument("gate: xi must be in [0,2]");
}

double gate_weight(double detection_entropy, double instance_entropy, const GateConfig& gate) {
  return instance_entropy < gate.xi ? detection_entropy : 0.0;
}

}  // namespace uadan::uncertainty
