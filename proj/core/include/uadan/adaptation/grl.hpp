#pragma once

#include <Eigen/Dense>

#include "uadan/tensor.hpp"

namespace uadan::adaptation {

/**
 * Gradient reversal bridges the minimax game into a single backward pass: the
 * forward direction is the identity (domain classifiers see the features
 * as-is), while gradients flowing back into the feature extractor are scaled
 * by -lambda. The classifiers thus descend on the domain loss and the
 * features ascend on it.
 */
inline Eigen::MatrixXd grl_backward(const Eigen::MatrixXd& dy, double lambda) {
  return (-lambda) * dy;
}

inline Tensor3 grl_backward(const Tensor3& dy, double lambda) {
  Tensor3 dx = dy;
  dx.data *= -lambda;
  return dx;
}

}  // namespace uadan::adaptation
