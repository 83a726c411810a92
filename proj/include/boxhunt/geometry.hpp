#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>

namespace boxhunt {

/// Axis-aligned rectangle in continuous pixel coordinates. (x1, y1) is the
/// top-left corner, (x2, y2) the bottom-right; y grows downward.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  /// Strictly positive width and height, all coordinates finite.
  bool valid() const;

  bool operator==(const Box&) const = default;
};

std::string to_string(const Box& b);

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
};

/// Sub-region geometry for the hierarchical zoom actions.
struct ZoomParams {
  double scale_subregion = 3.0 / 4.0;
  double scale_mask = 1.0 / 3.0;

  bool valid() const;

  bool operator==(const ZoomParams&) const = default;
};

/// Relative step size of the dynamic actions, 0 < alpha < 1.
struct Alpha {
  double value = 0.2;

  bool valid() const;

  bool operator==(const Alpha&) const = default;
};

enum class ZoomMove { kTopLeft = 0, kTopRight, kBottomLeft, kBottomRight, kCenter };

enum class DeformMove {
  kRight = 0,
  kLeft,
  kDown,
  kUp,
  kBigger,
  kSmaller,
  kFatter,
  kTaller,
};

inline constexpr double kMinSide = 3.0;

double intersection_area(const Box& a, const Box& b);

/// Intersection over union; 0 for disjoint boxes.
double iou(const Box& b, const Box& g);

/// Fraction of the ground truth `g` covered by `b`.
double recall(const Box& b, const Box& g);

/// One of the five zoom windows of `ancestor`. The window keeps its size and
/// is translated back inside the ancestor when the offset overshoots.
Box subregion(const Box& ancestor, ZoomMove move, const ZoomParams& p);

/// Applies one deformation step and clamps the result to `bounds`.
Box transform(const Box& b, DeformMove move, Alpha alpha, ImageSize bounds,
              double min_side = kMinSide);

/// Truncates `b` to the image and grows any side shorter than `min_side`.
/// A short side grows toward +x/+y unless that would cross the image edge,
/// in which case it grows the other way.
Box clamp(const Box& b, ImageSize bounds, double min_side = kMinSide);

struct BestMatch {
  std::size_t index = 0;
  double value = 0.0;
};

/// Arg-max of iou over `gts`; ties go to the lowest index.
/// Throws std::invalid_argument("no ground truth") on an empty list.
BestMatch best_iou(const Box& b, std::span<const Box> gts);

/// Same selection rule for the recall metric.
BestMatch best_recall(const Box& b, std::span<const Box> gts);

}  // namespace boxhunt
