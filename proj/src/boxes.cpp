#include "ct/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ct {

namespace {

void require_valid(const Box& b, const char* who) {
  if (!b.valid())
    throw std::invalid_argument(std::string(who) + ": degenerate box (" + std::to_string(b.x1) +
                                "," + std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                                std::to_string(b.y2) + ")");
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_box_delta(const Box& proposal, const Box& target) {
  require_valid(proposal, "encode_box_delta");
  require_valid(target, "encode_box_delta");
  return {(target.cx() - proposal.cx()) / proposal.width(),
          (target.cy() - proposal.cy()) / proposal.height(),
          std::log(target.width() / proposal.width()),
          std::log(target.height() / proposal.height())};
}

std::vector<Box> decode_boxes(const std::vector<Box>& proposals, const Tensor& deltas) {
  if (deltas.rows() != static_cast<int>(proposals.size()) || deltas.cols() != 4)
    throw std::invalid_argument("decode_boxes: deltas " + deltas.shape_str() + " for " +
                                std::to_string(proposals.size()) + " proposals");
  std::vector<Box> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Box& p = proposals[i];
    require_valid(p, "decode_boxes");
    const int r = static_cast<int>(i);
    const double cx = deltas.at(r, 0) * p.width() + p.cx();
    const double cy = deltas.at(r, 1) * p.height() + p.cy();
    const double w = std::exp(deltas.at(r, 2)) * p.width();
    const double h = std::exp(deltas.at(r, 3)) * p.height();
    Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    b.x1 = std::clamp(b.x1, 0.0, 1.0);
    b.y1 = std::clamp(b.y1, 0.0, 1.0);
    b.x2 = std::clamp(b.x2, 0.0, 1.0);
    b.y2 = std::clamp(b.y2, 0.0, 1.0);
    out.push_back(b);
  }
  return out;
}

}  // namespace ct
