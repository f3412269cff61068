#include "uadan/adaptation/domain_classifiers.hpp"

#include <stdexcept>

namespace uadan::adaptation {

ImageDomainClassifier::ImageDomainClassifier(int feat_dim, int hidden)
    : conv1_("dom_img.conv1", feat_dim, hidden, 1, 1, 0), conv2_("dom_img.conv2", hidden, 1, 1, 1, 0) {}

void ImageDomainClassifier::init(util::Rng& rng) {
  nn::init_gaussian(conv1_.weight(), 0.01, rng);
  nn::init_gaussian(conv2_.weight(), 0.01, rng);
}

DomainPrediction ImageDomainClassifier::forward(const Tensor3& feat, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  const Tensor3 hidden = nn::relu(conv1_.forward(feat, &c->c1), &c->relu);
  const Tensor3 out = conv2_.forward(hidden, &c->c2);
  DomainPrediction pred;
  pred.logits = out.data.row(0).transpose();
  pred.probs = pred.logits.unaryExpr([](double z) { return nn::sigmoid(z); });
  return pred;
}

Tensor3 ImageDomainClassifier::backward(const Eigen::VectorXd& dlogits, const Cache& cache) {
  Tensor3 dout(1, cache.c2.in_h, cache.c2.in_w);
  dout.data.row(0) = dlogits.transpose();
  Tensor3 dhidden = conv2_.backward(dout, cache.c2);
  return conv1_.backward(nn::relu_backward(dhidden, cache.relu), cache.c1);
}

std::vector<nn::Param*> ImageDomainClassifier::params() {
  std::vector<nn::Param*> out;
  for (nn::Conv2d* c : {&conv1_, &conv2_}) {
    for (nn::Param* p : c->params()) out.push_back(p);
  }
  return out;
}

InstanceDomainClassifier::InstanceDomainClassifier(int instance_dim, int hidden, double dropout_rate)
    : fc1_("dom_ins.fc1", instance_dim, hidden),
      fc2_("dom_ins.fc2", hidden, hidden),
      fc3_("dom_ins.fc3", hidden, 1),
      dropout_rate_(dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("InstanceDomainClassifier: dropout rate must be in [0,1)");
  }
}

void InstanceDomainClassifier::init(util::Rng& rng) {
  nn::init_gaussian(fc1_.weight(), 0.01, rng);
  nn::init_gaussian(fc2_.weight(), 0.01, rng);
  nn::init_gaussian(fc3_.weight(), 0.01, rng);
}

DomainPrediction InstanceDomainClassifier::forward(const Eigen::MatrixXd& instances, bool train,
                                                   util::Rng* rng, Cache* cache) const {
  Cache local;
  Cache* c = cache != nullptr ? cache : &local;
  Eigen::MatrixXd x = nn::relu(fc1_.forward(instances, &c->l1), &c->r1);
  x = nn::dropout(x, dropout_rate_, train, rng, &c->d1);
  x = nn::relu(fc2_.forward(x, &c->l2), &c->r2);
  x = nn::dropout(x, dropout_rate_, train, rng, &c->d2);
  const Eigen::MatrixXd out = fc3_.forward(x, &c->l3);
  DomainPrediction pred;
  pred.logits = out.row(0).transpose();
  pred.probs = pred.logits.unaryExpr([](double z) { return nn::sigmoid(z); });
  return pred;
}

Eigen::MatrixXd InstanceDomainClassifier::backward(const Eigen::VectorXd& dlogits,
                                                   const Cache& cache) {
  Eigen::MatrixXd dy(1, dlogits.size());
  dy.row(0) = dlogits.transpose();
  Eigen::MatrixXd d = fc3_.backward(dy, cache.l3);
  d = nn::dropout_backward(d, cache.d2);
  d = fc2_.backward(nn::relu_backward(d, cache.r2), cache.l2);
  d = nn::dropout_backward(d, cache.d1);
  return fc1_.backward(nn::relu_backward(d, cache.r1), cache.l1);
}

std::vector<nn::Param*> InstanceDomainClassifier::params() {
  std::vector<nn::Param*> out;
  for (nn::Linear* l : {&fc1_, &fc2_, &fc3_}) {
    for (nn::Param* p : l->params()) out.push_back(p);
  }
  return out;
}

}  // namespace uadan::adaptation
