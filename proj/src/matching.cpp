#include "inrprop/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "inrprop/error.hpp"

namespace inrprop {

void MatchConfig::validate() const {
  if (sigma && !(*sigma > 0.0)) throw ConfigError("match: sigma must be > 0");
  if (!(search_stride > 0.0)) throw ConfigError("match: search_stride must be > 0");
}

double MatchConfig::resolved_sigma(Canvas canvas) const {
  if (sigma) return *sigma;
  return 0.05 * std::max(canvas.width, canvas.height);
}

SearchGrid::SearchGrid(const FeatureSource& target, int t, double stride) {
  if (!(stride > 0.0)) throw ConfigError("match: search_stride must be > 0");
  const Canvas c = target.canvas();
  const auto nx = static_cast<Eigen::Index>(std::floor((c.width - 1.0) / stride + 1e-9)) + 1;
  const auto ny = static_cast<Eigen::Index>(std::floor((c.height - 1.0) / stride + 1e-9)) + 1;
  if (c.width < 1 || c.height < 1 || nx < 1 || ny < 1) throw ContractViolation("match: empty search lattice");
  points_.resize(2, nx * ny);
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      points_(0, i * nx + j) = static_cast<double>(j) * stride;
      points_(1, i * nx + j) = static_cast<double>(i) * stride;
    }
  }
  features_ = target.query(points_, t);
  for (Eigen::Index k = 0; k < features_.cols(); ++k) {
    const double n = features_.col(k).norm();
    if (n > 0.0) features_.col(k) /= n;
  }
}

MatchResult match_on_grid(const Eigen::VectorXd& source_feature, const Point2& source, const SearchGrid& grid,
                          std::optional<Point2> center, double sigma) {
  if (grid.size() == 0) throw ContractViolation("match: empty search lattice");
  const double n = source_feature.norm();
  const Eigen::VectorXd unit = n > 0.0 ? Eigen::VectorXd(source_feature / n) : source_feature;
  const Eigen::VectorXd cosine = grid.unit_features().transpose() * unit;
  const Eigen::Matrix2Xd& pts = grid.points();
  const double inv_two_sigma2 = center ? 1.0 / (2.0 * sigma * sigma) : 0.0;

  Eigen::Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    double s = cosine(k);
    if (center) {
      const double dx = pts(0, k) - center->x;
      const double dy = pts(1, k) - center->y;
      s *= std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
    }
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  MatchResult r;
  r.source = source;
  r.predicted = {pts(0, best), pts(1, best)};
  r.score = best_score;
  r.cosine = std::clamp(cosine(best), -1.0, 1.0);
  r.flow_center = center.value_or(source);
  return r;
}

namespace {

void check_point(const Point2& p, std::size_t index) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y))
    throw ContractViolation("match: point " + std::to_string(index) + " is not finite");
}

Eigen::MatrixXd source_features(const PairSpec& pair, std::span<const Point2> points) {
  Eigen::Matrix2Xd m(2, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    check_point(points[i], i);
    m(0, static_cast<Eigen::Index>(i)) = points[i].x;
    m(1, static_cast<Eigen::Index>(i)) = points[i].y;
  }
  return pair.src->query(m, pair.src_t);
}

}  // namespace

std::vector<MatchResult> match_points(std::span<const Point2> points, const PairSpec& pair,
                                      const DisplacementSource& disp, const MatchConfig& cfg) {
  cfg.validate();
  pair.validate();
  std::vector<MatchResult> out;
  if (points.empty()) return out;
  const Eigen::MatrixXd feats = source_features(pair, points);
  const SearchGrid grid(*pair.tgt, pair.tgt_t, cfg.search_stride);
  const double sigma = cfg.resolved_sigma(pair.tgt->canvas());
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point2 center = disp.displace(points[i]);
    if (!std::isfinite(center.x) || !std::isfinite(center.y))
      throw ContractViolation("match: point " + std::to_string(i) + " has a non-finite flow center");
    out.push_back(match_on_grid(feats.col(static_cast<Eigen::Index>(i)), points[i], grid, center, sigma));
  }
  return out;
}

MatchResult match_point(const Point2& p_src, const PairSpec& pair, const DisplacementSource& disp,
                        const MatchConfig& cfg) {
  const Point2 one[] = {p_src};
  return match_points(one, pair, disp, cfg).front();
}

MatchResult match_point_unguided(const Point2& p_src, const PairSpec& pair, const MatchConfig& cfg) {
  cfg.validate();
  pair.validate();
  const Point2 one[] = {p_src};
  const Eigen::MatrixXd feats = source_features(pair, one);
  const SearchGrid grid(*pair.tgt, pair.tgt_t, cfg.search_stride);
  return match_on_grid(feats.col(0), p_src, grid, std::nullopt, 0.0);
}

}  // namespace inrprop
