#pragma once

// Continuous spatiotemporal feature field fitted to a low-resolution feature
// volume through a learned, convex downsampling kernel.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "inrprop/feature_source.hpp"
#include "inrprop/siren.hpp"
#include "inrprop/volume.hpp"

namespace inrprop {

/// Depthwise convolution shared across channels. The effective kernel is
/// |raw| / sum|raw|, so outputs are per-channel convex combinations.
struct Downsampler {
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_y = 1;
  int stride_x = 1;
  std::vector<double> raw;  ///< kernel_h x kernel_w, row-major

  /// stride = hr / lr (integer division); kernel = stride + (hr mod lr > 0).
  /// The raw kernel starts uniform.
  static Downsampler for_resolution(Canvas hr, int lr_height, int lr_width);

  int taps() const { return kernel_h * kernel_w; }
  std::vector<double> effective() const;
  /// True when the effective kernel is non-negative and sums to 1 (within 1e-12).
  bool is_simplex() const;

  friend bool operator==(const Downsampler&, const Downsampler&) = default;
};

/// Weighted average of a D x (kh*kw) patch with the effective kernel.
/// Patch columns follow the kernel's row-major tap order.
Eigen::VectorXd downsample(const Eigen::MatrixXd& hr_patch, const Downsampler& d);

struct FeatureQuery {
  Eigen::VectorXd value;
  bool extrapolated = false;  ///< (x, y) outside the canvas or t outside [0, T-1]
};

class FeatureField final : public FeatureSource {
 public:
  FeatureField(SirenNet net, Downsampler downsampler, Canvas hr, int frames, std::string video_id = {});

  const SirenNet& net() const { return net_; }
  SirenNet& mutable_net() { return net_; }
  const Downsampler& downsampler() const { return downsampler_; }
  Downsampler& mutable_downsampler() { return downsampler_; }
  const std::string& video_id() const { return video_id_; }
  void set_video_id(std::string id) { video_id_ = std::move(id); }

  Canvas canvas() const override { return hr_; }
  int frame_count() const override { return frames_; }
  Eigen::Index feature_dim() const override { return net_.config().out_dim; }

  /// Pixel/frame coordinates -> network input in [-1, 1]^3.
  Eigen::Vector3d normalize(double x, double y, double t) const;
  Eigen::Matrix3Xd normalize(const Eigen::Matrix2Xd& points, double t) const;

  Eigen::MatrixXd query(const Eigen::Matrix2Xd& points, double t) const override;
  Linearization linearize(const Eigen::Matrix2Xd& points, double t) const override;

  FeatureQuery query_feature(double x, double y, double t) const;
  /// D x 3 Jacobian w.r.t. (x px, y px, t frames).
  Eigen::MatrixXd query_jacobian(double x, double y, double t) const;

 private:
  SirenNet net_;
  Downsampler downsampler_;
  Canvas hr_;
  int frames_;
  std::string video_id_;
  AxisMap map_x_, map_y_, map_t_;
};

struct FieldFitConfig {
  int epochs = 500;
  int cells_per_step = 1024;
  /// Optimizer steps per epoch; the loss trace holds the per-epoch mean.
  int steps_per_epoch = 1;
  double lr = 1e-4;
  int hr_size = 112;
  /// HR width; 0 keeps the volume's aspect ratio (hr_size * W' / H').
  int hr_width = 0;
  std::uint64_t seed = 0;

  std::uint32_t hidden_dim = 256;
  std::uint32_t n_hidden_layers = 2;
  double omega0 = 30.0;
  Activation activation = Activation::sine;
  std::uint32_t n_frequencies = 3;

  void validate() const;
  SirenConfig net_config(std::uint32_t feature_dim) const;
  Canvas hr_canvas(const FeatureVolume& volume) const;
};

struct FieldFit {
  FeatureField field;
  std::vector<double> loss_trace;
};

struct CellBatchLoss {
  double loss = 0.0;
  std::vector<double> net_grad;     ///< empty when the loss is not finite
  std::vector<double> kernel_grad;  ///< d loss / d raw kernel
};

/// MSE over the given LR cells of frame `t` and all channels, with gradients
/// w.r.t. the network parameters and the raw downsampling kernel.
CellBatchLoss cell_batch_loss(const FeatureField& field, const FeatureVolume& volume, std::uint32_t t,
                              std::span<const int> cells);

/// Called once per epoch with (epoch index, epoch count, epoch loss).
using EpochCallback = std::function<void(int, int, double)>;

FieldFit fit_feature_field(const FeatureVolume& volume, const FieldFitConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Mean squared error over every cell and channel of the volume.
double reconstruction_loss(const FeatureField& field, const FeatureVolume& volume);

struct ActivationChoice {
  Activation activation = Activation::sine;
  std::uint32_t n_frequencies = 0;
  std::string label() const;
};

struct ArchitectureRow {
  std::string label;
  std::size_t param_count = 0;
  double final_loss = 0.0;  ///< last entry of the loss trace
  double rmse = 0.0;        ///< sqrt of reconstruction_loss over the whole volume
  std::vector<double> loss_trace;
};

/// Fits one field per activation under the same budget, seed and sampling schedule.
std::vector<ArchitectureRow> compare_architectures(const FeatureVolume& volume, const FieldFitConfig& cfg,
                                                   std::span<const ActivationChoice> activations);

}  // namespace inrprop
