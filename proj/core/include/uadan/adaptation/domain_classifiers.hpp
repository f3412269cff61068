#pragma once

#include <Eigen/Dense>
#include <vector>

#include "uadan/nn/layers.hpp"
#include "uadan/tensor.hpp"

namespace uadan::adaptation {

/** Per-location (or per-instance) domain predictions: raw logits + sigmoid. */
struct DomainPrediction {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;  // sigmoid(logits), unclamped; losses floor inside logs

  Eigen::Index size() const { return logits.size(); }
};

/**
 * Image-level domain classifier: two 1x1 convolutions over the backbone
 * feature map, predicting source/target per spatial location.
 */
class ImageDomainClassifier {
 public:
  struct Cache {
    nn::Conv2d::Cache c1, c2;
    nn::ReluCache relu;
  };

  ImageDomainClassifier(int feat_dim, int hidden);

  DomainPrediction forward(const Tensor3& feat, Cache* cache = nullptr) const;
  /** dlogits: one gradient entry per spatial location. Returns dFeatures. */
  Tensor3 backward(const Eigen::VectorXd& dlogits, const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Conv2d conv1_, conv2_;
};

/**
 * Instance-level domain classifier: three fully connected layers over the
 * instance embeddings with dropout after the first two, predicting the domain
 * of each proposal.
 */
class InstanceDomainClassifier {
 public:
  struct Cache {
    nn::Linear::Cache l1, l2, l3;
    nn::ReluCache r1, r2;
    nn::DropoutCache d1, d2;
  };

  InstanceDomainClassifier(int instance_dim, int hidden, double dropout_rate = 0.5);

  DomainPrediction forward(const Eigen::MatrixXd& instances, bool train, util::Rng* rng,
                           Cache* cache = nullptr) const;
  Eigen::MatrixXd backward(const Eigen::VectorXd& dlogits, const Cache& cache);

  void init(util::Rng& rng);
  std::vector<nn::Param*> params();

 private:
  nn::Linear fc1_, fc2_, fc3_;
  double dropout_rate_;
};

}  // namespace uadan::adaptation
