#pragma once

// Mask propagation: interior points from the distance transform, point
// transfer through matching, and Gaussian-KDE reconstruction on the target.

#include <cstdint>
#include <span>
#include <vector>

#include "inrprop/geometry.hpp"
#include "inrprop/matching.hpp"

namespace inrprop {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  ///< 0 or 1, row-major

  BinaryMask() = default;
  /// Throws ContractViolation unless both dimensions are positive.
  BinaryMask(int w, int h);

  Canvas canvas() const { return {width, height}; }
  bool at(int x, int y) const { return bits[index(x, y)] != 0; }
  void set(int x, int y, bool v = true) { bits[index(x, y)] = v ? 1 : 0; }
  std::size_t count() const;
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Filled disc of radius `r` around (cx, cy): pixels with squared distance <= r^2.
BinaryMask disc_mask(Canvas canvas, double cx, double cy, double r);

struct ProbabilityField {
  int width = 0;
  int height = 0;
  std::vector<double> values;  ///< row-major, in [0, 1]

  Canvas canvas() const { return {width, height}; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const ProbabilityField&, const ProbabilityField&) = default;
};

struct InteriorConfig {
  double d_min = 2.0;
  void validate() const;
};

struct KdeConfig {
  double sigma = 6.0;
  double tau = 0.25;
  void validate() const;
};

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel; 0 on background. Pixels just outside the canvas count
/// as background, so an all-foreground mask is measured to its border.
std::vector<double> edt(const BinaryMask& mask);

struct InteriorPoints {
  enum class Level { requested, unit_distance, all_foreground };
  std::vector<PixelIndex> points;  ///< row-major order
  Level level = Level::requested;
  double d_min_used = 0.0;
};

/// {p : edt(p) >= d_min}; on an empty result falls back to d_min = 1, then to
/// every foreground pixel. Throws DegenerateMaskError for an empty mask.
InteriorPoints interior_points(const BinaryMask& mask, const InteriorConfig& cfg);

/// Nearest pixel with halves rounded up, clamped to the canvas.
PixelIndex round_to_pixel(const Point2& p, Canvas canvas);

/// Hit map of the rounded points convolved with a Gaussian of std `sigma`
/// (truncated at 4 sigma, zero padding), divided by its maximum.
ProbabilityField kde_field(std::span<const Point2> points, Canvas canvas, double sigma);

/// Pixels with P >= tau.
BinaryMask threshold(const ProbabilityField& field, double tau);

struct KdeResult {
  ProbabilityField field;
  BinaryMask mask;
};

KdeResult kde_reconstruct(std::span<const Point2> points, Canvas canvas, const KdeConfig& cfg);

struct MaskPropagation {
  BinaryMask mask;
  ProbabilityField field;
  InteriorPoints interior;
  std::vector<MatchResult> matches;
};

/// interior_points -> match_points -> kde_reconstruct. Failures are rethrown
/// as StageError tagged "interior", "match" or "kde".
MaskPropagation propagate_mask(const BinaryMask& mask, const PairSpec& pair, const DisplacementSource& disp,
                               const MatchConfig& match_cfg, const InteriorConfig& interior_cfg,
                               const KdeConfig& kde_cfg);

}  // namespace inrprop
