#pragma once

#include <cmath>
#include <cstdint>

namespace inrprop {

/// Point on an annotation canvas, in pixels. Pixel (i, j) has its center at x=i, y=j.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  double norm() const { return std::hypot(x, y); }
};

struct PixelIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Canvas dimensions in pixels.
struct Canvas {
  int width = 0;
  int height = 0;

  friend bool operator==(const Canvas&, const Canvas&) = default;
  bool contains(const Point2& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1.0 && p.y <= height - 1.0;
  }
  std::int64_t area() const { return static_cast<std::int64_t>(width) * height; }
};

/// Affine map between a pixel axis of `extent` samples and [-1, 1].
/// A single-sample axis maps everything to 0.
class AxisMap {
 public:
  AxisMap() = default;
  explicit AxisMap(int extent) : half_span_(extent > 1 ? 0.5 * (extent - 1) : 0.0) {}

  double to_unit(double px) const { return half_span_ > 0.0 ? px / half_span_ - 1.0 : 0.0; }
  double to_pixel(double unit) const { return (unit + 1.0) * half_span_; }
  /// d(unit)/d(px)
  double unit_per_pixel() const { return half_span_ > 0.0 ? 1.0 / half_span_ : 0.0; }
  double pixels_per_unit() const { return half_span_; }

 private:
  double half_span_ = 0.0;
};

}  // namespace inrprop
