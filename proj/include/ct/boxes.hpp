#pragma once

#include <array>

#include "ct/tensor.hpp"

namespace ct {

/// Axis-aligned box on the unit canvas, corners (x1,y1) < (x2,y2).
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  /// True when `inner` lies entirely inside this box.
  bool contains(const Box& inner) const {
    return inner.x1 >= x1 && inner.y1 >= y1 && inner.x2 <= x2 && inner.y2 <= y2;
  }
};

/// Intersection over union; 0 for disjoint boxes. Throws on degenerate input.
double iou(const Box& a, const Box& b);

/// Faster R-CNN style deltas (dx, dy, dw, dh) carrying proposal -> target,
/// with log-scale width/height.
std::array<double, 4> encode_box_delta(const Box& proposal, const Box& target);

/// Inverse of encode_box_delta, applied row-wise; outputs clipped to the unit
/// canvas. Throws on a degenerate proposal.
std::vector<Box> decode_boxes(const std::vector<Box>& proposals, const Tensor& deltas);

}  // namespace ct
