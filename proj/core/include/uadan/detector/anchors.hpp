#pragma once

#include <array>
#include <vector>

#include "uadan/boxes.hpp"

namespace uadan::detector {

/**
 * Square anchors tiled over the feature map: one per (location, side) pair,
 * centered at ((x+0.5)*stride, (y+0.5)*stride) in pixel coordinates, kept in
 * a fixed flat order: anchor (y, x, ri) lives at index ((y*v)+x)*r + ri.
 */
struct AnchorGrid {
  int u = 0;       // feature-map rows
  int v = 0;       // feature-map cols
  int stride = 0;  // pixels per feature cell
  int r = 0;       // anchors per location
  std::vector<Box> boxes;

  int size() const { return u * v * r; }
  int index(int y, int x, int ri) const { return (y * v + x) * r + ri; }
};

AnchorGrid make_anchors(int feat_h, int feat_w, int stride, const std::vector<int>& sides);

/**
 * Box regression targets in the usual parameterization: center offsets are
 * relative to the anchor size, extents are log ratios.
 */
std::array<double, 4> encode_box(const Box& anchor, const Box& target);

/** Inverse of encode_box. Log-extent deltas are clamped to +-4 so freshly
 *  initialized heads cannot produce astronomically large boxes. */
Box decode_box(const Box& anchor, double tx, double ty, double tw, double th);

}  // namespace uadan::detector
