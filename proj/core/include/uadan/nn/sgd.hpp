#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "uadan/nn/layers.hpp"

namespace uadan::nn {

/**
 * SGD with classical momentum and decoupled-per-parameter weight decay:
 *
 *   v <- momentum * v + (grad + weight_decay * value)   (decay on weights only)
 *   value <- value - lr * v
 *
 * Momentum buffers are exposed for checkpointing so a restored run continues
 * bit-for-bit.
 */
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Param*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (const Param* p : params_) {
      velocity_.emplace_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      Eigen::MatrixXd g = p.grad;
      if (p.decay) g += weight_decay_ * p.value;
      velocity_[i] = momentum_ * velocity_[i] + g;
      p.value -= lr * velocity_[i];
    }
  }

  const std::vector<Param*>& params() const { return params_; }
  const std::vector<Eigen::MatrixXd>& velocity() const { return velocity_; }

  void set_velocity(std::vector<Eigen::MatrixXd> v) {
    if (v.size() != velocity_.size()) {
      throw std::invalid_argument("SgdOptimizer: velocity count mismatch");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].rows() != velocity_[i].rows() || v[i].cols() != velocity_[i].cols()) {
        throw std::invalid_argument("SgdOptimizer: velocity shape mismatch");
      }
    }
    velocity_ = std::move(v);
  }

 private:
  std::vector<Param*> params_;
  double momentum_;
  double weight_decay_;
  std::vector<Eigen::MatrixXd> velocity_;
};

}  // namespace uadan::nn
