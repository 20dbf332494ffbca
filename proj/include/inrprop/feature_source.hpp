#pragma once

#include <functional>

#include <Eigen/Core>

#include "inrprop/geometry.hpp"

namespace inrprop {

/// Anything that can be queried for features at continuous canvas positions.
/// Points are 2 x N matrices of (x, y) in canvas pixels.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;

  virtual Canvas canvas() const = 0;
  virtual int frame_count() const = 0;
  virtual Eigen::Index feature_dim() const = 0;

  /// D x N features at `points` of frame `t`.
  virtual Eigen::MatrixXd query(const Eigen::Matrix2Xd& points, double t) const = 0;

  struct Linearization {
    Eigen::MatrixXd values;
    /// Maps an upstream D x N matrix to d/d(points) of sum_n <values_n, upstream_n>,
    /// in per-pixel units (2 x N).
    std::function<Eigen::Matrix2Xd(const Eigen::MatrixXd&)> pullback;
  };

  /// Values at `points` together with their vector-Jacobian product.
  virtual Linearization linearize(const Eigen::Matrix2Xd& points, double t) const = 0;
};

/// Anything returning a per-point displacement in canvas pixels.
class DisplacementSource {
 public:
  virtual ~DisplacementSource() = default;

  virtual Point2 displacement(const Point2& p) const = 0;

  /// Batched form; default loops over displacement().
  virtual Eigen::Matrix2Xd displacements(const Eigen::Matrix2Xd& points) const {
    Eigen::Matrix2Xd out(2, points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
      const Point2 d = displacement({points(0, i), points(1, i)});
      out(0, i) = d.x;
      out(1, i) = d.y;
    }
    return out;
  }

  Point2 displace(const Point2& p) const { return p + displacement(p); }
};

}  // namespace inrprop
