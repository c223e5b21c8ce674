#pragma once

#include <algorithm>
#include <cmath>

#include "srtod/errors.hpp"

namespace srtod {

/// Axis-aligned ground-truth box, continuous pixel coordinates.
struct GroundTruthBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int class_id = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double sqrt_area() const { return std::sqrt(area()); }
  bool valid() const { return x_max > x_min && y_max > y_min; }
};

/// Detection with confidence score in [0,1].
struct Detection {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int class_id = 0;
  double score = 0;

  GroundTruthBox box() const { return {x_min, y_min, x_max, y_max, class_id}; }
};

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const GroundTruthBox& a, const GroundTruthBox& b) {
  if (!a.valid() || !b.valid())
    throw ValidationError("iou: degenerate box");
  const double ix1 = std::max(a.x_min, b.x_min);
  const double iy1 = std::max(a.y_min, b.y_min);
  const double ix2 = std::min(a.x_max, b.x_max);
  const double iy2 = std::min(a.y_max, b.y_max);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// AI-TOD-style size buckets keyed by sqrt(box area), half-open boundaries.
enum class SizeBucket { kVeryTiny, kTiny, kSmall, kOther };

inline SizeBucket size_bucket(const GroundTruthBox& box) {
  if (!box.valid()) throw ValidationError("size_bucket: degenerate box");
  const double s = box.sqrt_area();
  if (s < 8.0) return SizeBucket::kVeryTiny;
  if (s < 16.0) return SizeBucket::kTiny;
  if (s < 32.0) return SizeBucket::kSmall;
  return SizeBucket::kOther;
}

inline const char* bucket_name(SizeBucket b) {
  switch (b) {
    case SizeBucket::kVeryTiny: return "very_tiny";
    case SizeBucket::kTiny: return "tiny";
    case SizeBucket::kSmall: return "small";
    case SizeBucket::kOther: return "other";
  }
  return "?";
}

}  // namespace srtod
