#pragma once

#include <algorithm>
#include <stdexcept>

namespace uadan {

/** Axis-aligned box in continuous pixel coordinates, corners (x1,y1)-(x2,y2). */
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  /** Strictly positive extent on both axes. */
  bool valid() const { return x2 > x1 && y2 > y1; }
};

/** Clip a box to the image rectangle [0,w] x [0,h]. May produce a degenerate box. */
inline Box clip_box(const Box& b, double w, double h) {
  return Box{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
             std::clamp(b.y2, 0.0, h)};
}

/** Intersection-over-union of two valid boxes. Degenerate inputs are an error. */
inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

}  // namespace uadan
