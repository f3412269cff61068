#include "uadan/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace uadan::nn {

void init_gaussian(Param& p, double stddev, util::Rng& rng) {
  double* data = p.value.data();
  const Eigen::Index n = p.value.size();
  for (Eigen::Index i = 0; i < n; ++i) data[i] = rng.normal(0.0, stddev);
}

void init_he(Param& p, int fan_in, util::Rng& rng) {
  init_gaussian(p, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      weight_(name + ".weight", out_ch, in_ch * ksize * ksize, true),
      bias_(name + ".bias", out_ch, 1, false) {
  if (in_ch <= 0 || out_ch <= 0 || ksize <= 0 || stride <= 0 || pad < 0) {
    throw std::invalid_argument("Conv2d: invalid geometry");
  }
}

Eigen::MatrixXd Conv2d::im2col(const Tensor3& x) const {
  const int oh = out_dim(x.h);
  const int ow = out_dim(x.w);
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(in_ch_ * ksize_ * ksize_, oh * ow);
  for (int c = 0; c < in_ch_; ++c) {
    for (int ky = 0; ky < ksize_; ++ky) {
      for (int kx = 0; kx < ksize_; ++kx) {
        const int row = (c * ksize_ + ky) * ksize_ + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= x.w) continue;
            col(row, oy * ow + ox) = x.data(c, iy * x.w + ix);
          }
        }
      }
    }
  }
  return col;
}

void Conv2d::col2im_add(const Eigen::MatrixXd& dcol, Tensor3& dx) const {
  const int oh = out_dim(dx.h);
  const int ow = out_dim(dx.w);
  for (int c = 0; c < in_ch_; ++c) {
    for (int ky = 0; ky < ksize_; ++ky) {
      for (int kx = 0; kx < ksize_; ++kx) {
        const int row = (c * ksize_ + ky) * ksize_ + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= dx.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= dx.w) continue;
            dx.data(c, iy * dx.w + ix) += dcol(row, oy * ow + ox);
          }
        }
      }
    }
  }
}

Tensor3 Conv2d::forward(const Tensor3& x, Cache* cache) const {
  if (x.ch != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int oh = out_dim(x.h);
  const int ow = out_dim(x.w);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input smaller than kernel");
  Eigen::MatrixXd col = im2col(x);
  Tensor3 y(out_ch_, oh, ow);
  y.data.noalias() = weight_.value * col;
  y.data.colwise() += bias_.value.col(0);
  if (cache != nullptr) {
    cache->col = std::move(col);
    cache->in_h = x.h;
    cache->in_w = x.w;
  }
  return y;
}

Tensor3 Conv2d::backward(const Tensor3& dy, const Cache& cache) {
  if (cache.in_h == 0) throw std::logic_error("Conv2d: backward without cached forward");
  weight_.grad.noalias() += dy.data * cache.col.transpose();
  bias_.grad.col(0) += dy.data.rowwise().sum();
  const Eigen::MatrixXd dcol = weight_.value.transpose() * dy.data;
  Tensor3 dx(in_ch_, cache.in_h, cache.in_w);
  col2im_add(dcol, dx);
  return dx;
}

Linear::Linear(std::string name, int in_dim, int out_dim)
    : weight_(name + ".weight", out_dim, in_dim, true), bias_(name + ".bias", out_dim, 1, false) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("Linear: invalid dimensions");
}

Eigen::MatrixXd Linear::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != weight_.value.cols()) throw std::invalid_argument("Linear: dimension mismatch");
  Eigen::MatrixXd y = weight_.value * x;
  y.colwise() += bias_.value.col(0);
  if (cache != nullptr) cache->x = x;
  return y;
}

Eigen::MatrixXd Linear::backward(const Eigen::MatrixXd& dy, const Cache& cache) {
  weight_.grad.noalias() += dy * cache.x.transpose();
  bias_.grad.col(0) += dy.rowwise().sum();
  return weight_.value.transpose() * dy;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x, ReluCache* cache) {
  Eigen::ArrayXXd mask = (x.array() > 0.0).cast<double>();
  Eigen::MatrixXd y = x.cwiseProduct(mask.matrix());
  if (cache != nullptr) cache->mask = std::move(mask);
  return y;
}

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& dy, const ReluCache& cache) {
  return dy.cwiseProduct(cache.mask.matrix());
}

Tensor3 relu(const Tensor3& x, ReluCache* cache) {
  Tensor3 y = x;
  Eigen::ArrayXXd mask = (x.data.array() > 0.0).cast<double>();
  y.data = x.data.cwiseProduct(mask.matrix());
  if (cache != nullptr) cache->mask = std::move(mask);
  return y;
}

Tensor3 relu_backward(const Tensor3& dy, const ReluCache& cache) {
  Tensor3 dx(dy.ch, dy.h, dy.w);
  dx.data = dy.data.cwiseProduct(cache.mask.matrix());
  return dx;
}

Eigen::MatrixXd dropout(const Eigen::MatrixXd& x, double rate, bool train, util::Rng* rng,
                        DropoutCache* cache) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) {
    if (cache != nullptr) cache->active = false;
    return x;
  }
  if (rng == nullptr) throw std::invalid_argument("dropout: training mode requires an rng");
  const double scale = 1.0 / (1.0 - rate);
  Eigen::ArrayXXd mask(x.rows(), x.cols());
  // Column-major fill so mask draws are a deterministic function of shape.
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      mask(i, j) = rng->uniform() < rate ? 0.0 : scale;
    }
  }
  if (cache != nullptr) {
    cache->mask = mask;
    cache->active = true;
  }
  return x.cwiseProduct(mask.matrix());
}

Eigen::MatrixXd dropout_backward(const Eigen::MatrixXd& dy, const DropoutCache& cache) {
  if (!cache.active) return dy;
  return dy.cwiseProduct(cache.mask.matrix());
}

Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Eigen::VectorXd shifted = logits.col(j).array() - logits.col(j).maxCoeff();
    const Eigen::VectorXd e = shifted.array().exp();
    p.col(j) = e / e.sum();
  }
  return p;
}

}  // namespace uadan::nn
