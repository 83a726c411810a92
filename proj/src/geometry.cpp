#include "boxhunt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace boxhunt {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

std::string to_string(const Box& b) {
  std::ostringstream os;
  os << "(" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ")";
  return os.str();
}

bool ZoomParams::valid() const {
  return std::isfinite(scale_subregion) && std::isfinite(scale_mask) &&
         scale_subregion > 0.0 && scale_subregion < 1.0 && scale_mask > 0.0 &&
         scale_mask <= 1.0;
}

bool Alpha::valid() const { return std::isfinite(value) && value > 0.0 && value < 1.0; }

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& b, const Box& g) {
  const double inter = intersection_area(b, g);
  if (inter == 0.0) return 0.0;
  return inter / (b.area() + g.area() - inter);
}

double recall(const Box& b, const Box& g) { return intersection_area(b, g) / g.area(); }

Box subregion(const Box& ancestor, ZoomMove move, const ZoomParams& p) {
  const double w = ancestor.width() * p.scale_subregion;
  const double h = ancestor.height() * p.scale_subregion;
  const double step_x = w * p.scale_mask;
  const double step_y = h * p.scale_mask;

  double dx = 0.0;
  double dy = 0.0;
  switch (move) {
    case ZoomMove::kTopLeft:
      break;
    case ZoomMove::kTopRight:
      dx = step_x;
      break;
    case ZoomMove::kBottomLeft:
      dy = step_y;
      break;
    case ZoomMove::kBottomRight:
      dx = step_x;
      dy = step_y;
      break;
    case ZoomMove::kCenter:
      dx = step_x / 2.0;
      dy = step_y / 2.0;
      break;
  }

  // Translate back inside the ancestor without resizing.
  dx = std::min(dx, ancestor.width() - w);
  dy = std::min(dy, ancestor.height() - h);
  const double x1 = ancestor.x1 + dx;
  const double y1 = ancestor.y1 + dy;
  return {x1, y1, x1 + w, y1 + h};
}

Box transform(const Box& b, DeformMove move, Alpha alpha, ImageSize bounds,
              double min_side) {
  const double aw = alpha.value * b.width();
  const double ah = alpha.value * b.height();
  Box out = b;
  switch (move) {
    case DeformMove::kRight:
      out.x1 += aw;
      out.x2 += aw;
      break;
    case DeformMove::kLeft:
      out.x1 -= aw;
      out.x2 -= aw;
      break;
    case DeformMove::kDown:
      out.y1 += ah;
      out.y2 += ah;
      break;
    case DeformMove::kUp:
      out.y1 -= ah;
      out.y2 -= ah;
      break;
    case DeformMove::kBigger:
      out.x1 -= aw / 2.0;
      out.x2 += aw / 2.0;
      out.y1 -= ah / 2.0;
      out.y2 += ah / 2.0;
      break;
    case DeformMove::kSmaller:
      out.x1 += aw / 2.0;
      out.x2 -= aw / 2.0;
      out.y1 += ah / 2.0;
      out.y2 -= ah / 2.0;
      break;
    case DeformMove::kFatter:
      out.y1 += ah / 2.0;
      out.y2 -= ah / 2.0;
      break;
    case DeformMove::kTaller:
      out.x1 += aw / 2.0;
      out.x2 -= aw / 2.0;
      break;
  }
  return clamp(out, bounds, min_side);
}

namespace {

void clamp_axis(double& lo, double& hi, double extent, double min_side) {
  lo = std::clamp(lo, 0.0, extent);
  hi = std::clamp(hi, 0.0, extent);
  if (hi - lo < min_side) {
    hi = lo + min_side;
    if (hi > extent) {
      hi = extent;
      lo = extent - min_side;
    }
  }
}

template <typename Metric>
BestMatch best_match(const Box& b, std::span<const Box> gts, Metric metric) {
  if (gts.empty()) throw std::invalid_argument("no ground truth");
  BestMatch best{0, metric(b, gts[0])};
  for (std::size_t i = 1; i < gts.size(); ++i) {
    const double v = metric(b, gts[i]);
    if (v > best.value) best = {i, v};
  }
  return best;
}

}  // namespace

Box clamp(const Box& b, ImageSize bounds, double min_side) {
  Box out = b;
  clamp_axis(out.x1, out.x2, bounds.width, min_side);
  clamp_axis(out.y1, out.y2, bounds.height, min_side);
  return out;
}

BestMatch best_iou(const Box& b, std::span<const Box> gts) {
  return best_match(b, gts, [](const Box& x, const Box& g) { return iou(x, g); });
}

BestMatch best_recall(const Box& b, std::span<const Box> gts) {
  return best_match(b, gts, [](const Box& x, const Box& g) { return recall(x, g); });
}

}  // namespace boxhunt
