#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace uadan {

/**
 * Dense channels x height x width tensor.
 *
 * Storage is a single Eigen matrix of shape (channels, height*width) with
 * spatial index column-major in scanline order: column j corresponds to pixel
 * (y, x) with j = y*width + x. Keeping the channel dimension contiguous per
 * pixel lets convolution lower to one GEMM after im2col.
 */
struct Tensor3 {
  int ch = 0;
  int h = 0;
  int w = 0;
  Eigen::MatrixXd data;

  Tensor3() = default;

  Tensor3(int channels, int height, int width)
      : ch(channels), h(height), w(width), data(Eigen::MatrixXd::Zero(channels, height * width)) {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw std::invalid_argument("Tensor3: non-positive dimension");
    }
  }

  double& at(int c, int y, int x) { return data(c, y * w + x); }
  double at(int c, int y, int x) const { return data(c, y * w + x); }

  int pixels() const { return h * w; }
  bool same_shape(const Tensor3& o) const { return ch == o.ch && h == o.h && w == o.w; }

  static Tensor3 zeros_like(const Tensor3& o) { return Tensor3(o.ch, o.h, o.w); }
};

}  // namespace uadan
