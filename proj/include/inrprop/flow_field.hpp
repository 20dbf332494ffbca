#pragma once

// Per-pair displacement fields fitted by aligning queried features.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "inrprop/error.hpp"
#include "inrprop/feature_field.hpp"
#include "inrprop/feature_source.hpp"
#include "inrprop/siren.hpp"

namespace inrprop {

struct FlowFitConfig {
  int epochs = 1000;
  double lr = 1e-4;
  double lambda_tv = 10.0;
  double lambda_l1 = 0.01;
  int sample_grid = 64;
  int tv_grid = 32;
  std::uint64_t seed = 0;
  std::uint32_t hidden_dim = 128;
  double omega0 = 30.0;

  void validate() const;
  SirenConfig net_config() const;
};

/// Source and target frames, possibly from two different videos.
struct PairSpec {
  std::shared_ptr<const FeatureSource> src;
  int src_t = 0;
  std::shared_ptr<const FeatureSource> tgt;
  int tgt_t = 0;
  std::string src_id;
  std::string tgt_id;

  void validate() const;
  bool intra_video() const { return src == tgt; }
  /// Hash of (src_id, src_t, tgt_id, tgt_t); seeds per-pair networks.
  std::uint64_t content_hash() const;
};

struct PairMeta {
  std::string src_video;
  int src_t = 0;
  std::string tgt_video;
  int tgt_t = 0;
  Canvas canvas;

  friend bool operator==(const PairMeta&, const PairMeta&) = default;
};

/// Displacement SIREN g: R^2 -> R^2. The network works in normalized units on
/// both sides; displacement() converts to canvas pixels.
class DisplacementField final : public DisplacementSource {
 public:
  DisplacementField(SirenNet net, PairMeta meta, std::vector<double> loss_trace = {});

  const SirenNet& net() const { return net_; }
  SirenNet& mutable_net() { return net_; }
  const PairMeta& meta() const { return meta_; }
  Canvas canvas() const { return meta_.canvas; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }
  void set_loss_trace(std::vector<double> trace) { loss_trace_ = std::move(trace); }

  Point2 displacement(const Point2& p) const override;
  Eigen::Matrix2Xd displacements(const Eigen::Matrix2Xd& points) const override;

  /// Pixel points -> network input.
  Eigen::Matrix2Xd normalize(const Eigen::Matrix2Xd& points) const;
  /// Pixels per normalized unit along x and y.
  Eigen::Vector2d pixel_scale() const;

  friend bool operator==(const DisplacementField& a, const DisplacementField& b) {
    return a.net_ == b.net_ && a.meta_ == b.meta_ && a.loss_trace_ == b.loss_trace_;
  }

 private:
  SirenNet net_;
  PairMeta meta_;
  std::vector<double> loss_trace_;
  AxisMap map_x_, map_y_;
};

/// Regular lattice of `n` x `n` points spanning the canvas, row-major.
Eigen::Matrix2Xd canvas_lattice(Canvas canvas, int n);

struct FlowLoss {
  double total = 0.0;
  double feature = 0.0;
  double tv = 0.0;
  double l1 = 0.0;
  std::vector<double> grad;  ///< d total / d params, empty unless requested
};

/// Feature alignment + lambda_tv * TV + lambda_l1 * mean |displacement| over
/// fixed lattices. Source features are evaluated once at construction.
class FlowObjective {
 public:
  FlowObjective(const PairSpec& pair, const FlowFitConfig& cfg);

  FlowLoss evaluate(const DisplacementField& disp, bool with_grad) const;

  const Eigen::Matrix2Xd& sample_points() const { return samples_; }
  Canvas canvas() const { return canvas_; }

 private:
  PairSpec pair_;
  FlowFitConfig cfg_;
  Canvas canvas_;
  Eigen::Matrix2Xd samples_;
  Eigen::Matrix2Xd tv_points_;
  Eigen::MatrixXd src_features_;
};

/// Fresh (unfitted) displacement field for a pair, seeded from the pair content.
DisplacementField init_displacement(const PairSpec& pair, const FlowFitConfig& cfg);

DisplacementField fit_displacement(const PairSpec& pair, const FlowFitConfig& cfg,
                                   const EpochCallback& on_epoch = {});

struct BatchError {
  std::size_t index = 0;
  std::string message;
  ErrorClass error_class = ErrorClass::internal;
};

struct FlowBatchResult {
  std::vector<std::optional<DisplacementField>> fields;
  /// Lowest-index failure, if any.
  std::optional<BatchError> first_error;
};

/// Fits every pair independently with up to `threads` workers. Results equal
/// sequential fit_displacement calls, in input order.
FlowBatchResult fit_displacements_batch(const std::vector<PairSpec>& pairs, const FlowFitConfig& cfg,
                                        int threads = 1);

/// Mean |displacement| in pixels over an n x n lattice of the field's canvas.
double mean_displacement_magnitude(const DisplacementSource& disp, Canvas canvas, int n);

}  // namespace inrprop
