#pragma once

// Flow-guided point correspondence: cosine similarity to the source feature,
// weighted by a Gaussian prior around the flow-predicted position, maximized
// by exhaustive scan over a target lattice.

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "inrprop/flow_field.hpp"
#include "inrprop/geometry.hpp"

namespace inrprop {

struct MatchConfig {
  /// Prior width in pixels; unset means 0.05 * max(canvas width, height).
  std::optional<double> sigma;
  /// Lattice spacing of the search set, in pixels.
  double search_stride = 1.0;

  void validate() const;
  double resolved_sigma(Canvas canvas) const;
};

struct MatchResult {
  Point2 source;
  Point2 predicted;
  double score = 0.0;   ///< cosine * prior at the argmax
  double cosine = 0.0;  ///< raw cosine at the argmax
  Point2 flow_center;   ///< source + displacement

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// Target features on the search lattice, computed once per pair and reused
/// for every matched point. Points are row-major over the canvas.
class SearchGrid {
 public:
  SearchGrid(const FeatureSource& target, int t, double stride);

  Eigen::Index size() const { return points_.cols(); }
  const Eigen::Matrix2Xd& points() const { return points_; }
  /// Unit-normalized features (zero vectors stay zero), D x |grid|.
  const Eigen::MatrixXd& unit_features() const { return features_; }

 private:
  Eigen::Matrix2Xd points_;
  Eigen::MatrixXd features_;
};

/// Cosine-only or cosine * Gaussian argmax over a prepared grid. With
/// `center` unset the prior is dropped. Ties go to the lowest grid index.
MatchResult match_on_grid(const Eigen::VectorXd& source_feature, const Point2& source, const SearchGrid& grid,
                          std::optional<Point2> center, double sigma);

MatchResult match_point(const Point2& p_src, const PairSpec& pair, const DisplacementSource& disp,
                        const MatchConfig& cfg);

/// Element-wise match_point with one shared search grid; output order = input order.
std::vector<MatchResult> match_points(std::span<const Point2> points, const PairSpec& pair,
                                      const DisplacementSource& disp, const MatchConfig& cfg);

/// Pure cosine argmax (no spatial prior).
MatchResult match_point_unguided(const Point2& p_src, const PairSpec& pair, const MatchConfig& cfg);

}  // namespace inrprop
