#include "uadan/detector/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadan::detector {

AnchorGrid make_anchors(int feat_h, int feat_w, int stride, const std::vector<int>& sides) {
  if (feat_h <= 0 || feat_w <= 0 || stride <= 0 || sides.empty()) {
    throw std::invalid_argument("make_anchors: invalid geometry");
  }
  AnchorGrid grid;
  grid.u = feat_h;
  grid.v = feat_w;
  grid.stride = stride;
  grid.r = static_cast<int>(sides.size());
  grid.boxes.reserve(static_cast<std::size_t>(grid.size()));
  for (int y = 0; y < feat_h; ++y) {
    for (int x = 0; x < feat_w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (int side : sides) {
        const double half = 0.5 * side;
        grid.boxes.push_back(Box{cx - half, cy - half, cx + half, cy + half});
      }
    }
  }
  return grid;
}

std::array<double, 4> encode_box(const Box& anchor, const Box& target) {
  if (!anchor.valid() || !target.valid()) throw std::invalid_argument("encode_box: degenerate box");
  const double aw = anchor.width();
  const double ah = anchor.height();
  return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah,
          std::log(target.width() / aw), std::log(target.height() / ah)};
}

Box decode_box(const Box& anchor, double tx, double ty, double tw, double th) {
  if (!anchor.valid()) throw std::invalid_argument("decode_box: degenerate anchor");
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double cx = anchor.cx() + tx * aw;
  const double cy = anchor.cy() + ty * ah;
  const double w = aw * std::exp(std::clamp(tw, -4.0, 4.0));
  const double h = ah * std::exp(std::clamp(th, -4.0, 4.0));
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace uadan::detector
