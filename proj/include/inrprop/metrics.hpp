#pragma once

// PCK, threshold-averaged position accuracy and Dice. Point errors are
// measured after scaling each axis to a 256 x 256 canvas.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "inrprop/geometry.hpp"
#include "inrprop/maskops.hpp"

namespace inrprop {

struct MetricsConfig {
  double canvas_norm = 256.0;
  std::vector<double> pck_thresholds = {4.0, 8.0, 16.0};
  std::vector<double> delta_thresholds = {1.0, 2.0, 4.0, 8.0, 16.0};
  void validate() const;
};

/// Per-point Euclidean errors on the normalized canvas.
std::vector<double> normalized_errors(const std::vector<Point2>& pred, const std::vector<Point2>& gt, Canvas canvas,
                                      double canvas_norm = 256.0);

/// Fraction of points with normalized error strictly below each PCK threshold.
std::vector<double> pck(const std::vector<Point2>& pred, const std::vector<Point2>& gt, Canvas canvas,
                        const MetricsConfig& cfg = {});

/// Mean over delta thresholds of the fraction of (frame, point) pairs within
/// the threshold. `visible`, when given, restricts scoring to visible pairs.
double delta_avg(const std::vector<std::vector<Point2>>& pred, const std::vector<std::vector<Point2>>& gt,
                 Canvas canvas, const MetricsConfig& cfg = {},
                 const std::optional<std::vector<std::vector<bool>>>& visible = std::nullopt);

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice(const BinaryMask& a, const BinaryMask& b);

struct MetricRecord {
  std::string metric;
  std::string label;  ///< e.g. "pck@8"; equals metric when there is one value
  double value = 0.0;
  std::size_t count = 0;
  nlohmann::json config;
};

nlohmann::json to_json(const MetricRecord& r);
/// metric,label,value,count
std::string to_csv(const std::vector<MetricRecord>& records);

}  // namespace inrprop
