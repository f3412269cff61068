#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "uadan/tensor.hpp"
#include "uadan/util/rng.hpp"

namespace uadan::nn {

/** A named trainable tensor with its gradient accumulator. */
struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  // Weight decay applies to multiplicative weights only; biases are exempt.
  bool decay = true;

  Param() = default;
  Param(std::string n, int rows, int cols, bool apply_decay)
      : name(std::move(n)),
        value(Eigen::MatrixXd::Zero(rows, cols)),
        grad(Eigen::MatrixXd::Zero(rows, cols)),
        decay(apply_decay) {}

  void zero_grad() { grad.setZero(); }
};

/** Fill a parameter with N(0, stddev^2) draws in storage order. */
void init_gaussian(Param& p, double stddev, util::Rng& rng);

/** He fan-in initialization: N(0, 2/fan_in). */
void init_he(Param& p, int fan_in, util::Rng& rng);

/**
 * 2-D convolution lowered to GEMM via im2col.
 *
 * Weight shape: (out_ch, in_ch*k*k); the forward pass materializes the column
 * matrix (in_ch*k*k, out_h*out_w) and computes y = W*col + b. The column
 * matrix is stashed in the caller-provided cache for the backward pass, which
 * keeps the layer object free of per-call state so several forward passes
 * (e.g. source and target images) can be in flight before their backwards.
 */
class Conv2d {
 public:
  struct Cache {
    Eigen::MatrixXd col;
    int in_h = 0;
    int in_w = 0;
  };

  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad);

  Tensor3 forward(const Tensor3& x, Cache* cache = nullptr) const;

  /** Accumulates weight/bias gradients and returns the input gradient. */
  Tensor3 backward(const Tensor3& dy, const Cache& cache);

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

  int out_dim(int in_dim) const { return (in_dim + 2 * pad_ - ksize_) / stride_ + 1; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int fan_in() const { return in_ch_ * ksize_ * ksize_; }

 private:
  Eigen::MatrixXd im2col(const Tensor3& x) const;
  void col2im_add(const Eigen::MatrixXd& dcol, Tensor3& dx) const;

  int in_ch_;
  int out_ch_;
  int ksize_;
  int stride_;
  int pad_;
  Param weight_;
  Param bias_;
};

/** Fully connected layer on column-stacked examples: y = W*x + b, x is (in, n). */
class Linear {
 public:
  struct Cache {
    Eigen::MatrixXd x;
  };

  Linear(std::string name, int in_dim, int out_dim);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy, const Cache& cache);

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_dim() const { return static_cast<int>(weight_.value.cols()); }
  int out_dim() const { return static_cast<int>(weight_.value.rows()); }

 private:
  Param weight_;
  Param bias_;
};

struct ReluCache {
  Eigen::ArrayXXd mask;
};

Eigen::MatrixXd relu(const Eigen::MatrixXd& x, ReluCache* cache = nullptr);
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& dy, const ReluCache& cache);
Tensor3 relu(const Tensor3& x, ReluCache* cache = nullptr);
Tensor3 relu_backward(const Tensor3& dy, const ReluCache& cache);

struct DropoutCache {
  // Scaled keep mask (0 or 1/(1-rate)); identity when dropout was inactive.
  Eigen::ArrayXXd mask;
  bool active = false;
};

/**
 * Inverted dropout: at train time each unit is zeroed with probability `rate`
 * and survivors are scaled by 1/(1-rate); at eval time this is the identity.
 */
Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double rate, bool train, util::Rng* rng,
                        DropoutCache* cache = nullptr);
Eigen::MatrixXd dropout_backward(const Eigen::MatrixXd& dy, const DropoutCache& cache);

/** Numerically stable sigmoid. */
inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/** Column-wise numerically stable softmax. */
Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits);

}  // namespace uadan::nn
