#pragma once

// Sine / ReLU coordinate MLPs with hand-derived gradients.
//
// Batches are column-major Eigen matrices with one sample per column:
// coordinates are in_dim x N, outputs out_dim x N.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace inrprop {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation : std::uint32_t { sine = 0, relu = 1, relu_pe = 2 };

std::string_view to_string(Activation a);
/// Accepts "sine", "relu", "relu_pe". Throws ConfigError otherwise.
Activation activation_from_string(std::string_view name);

struct SirenConfig {
  std::uint32_t in_dim = 3;
  std::uint32_t hidden_dim = 256;
  std::uint32_t n_hidden_layers = 2;
  std::uint32_t out_dim = 384;
  double omega0 = 30.0;
  Activation activation = Activation::sine;
  /// Octaves of positional encoding; only used by relu_pe.
  std::uint32_t n_frequencies = 0;

  /// Throws ConfigError on invalid combinations.
  void validate() const;
  /// Width of the first layer's input after optional positional encoding.
  std::uint32_t encoded_dim() const;
  /// Number of affine layers (hidden layers + output projection).
  int layer_count() const { return static_cast<int>(n_hidden_layers) + 1; }
  std::size_t parameter_count() const;

  friend bool operator==(const SirenConfig&, const SirenConfig&) = default;
};

/// Parameters of one coordinate MLP. All parameters live in a single flat
/// buffer, laid out per layer as the weight matrix (row-major, out x in)
/// followed by the bias vector.
class SirenNet {
 public:
  SirenNet(const SirenConfig& config, std::uint64_t seed, std::vector<double> params);

  const SirenConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  int layer_count() const { return config_.layer_count(); }
  Eigen::Index fan_in(int layer) const;
  Eigen::Index fan_out(int layer) const;

  Eigen::Map<const RowMatrix> weight(int layer) const;
  Eigen::Map<RowMatrix> weight(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  std::size_t weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
  std::size_t bias_offset(int layer) const;

  friend bool operator==(const SirenNet& a, const SirenNet& b) {
    return a.config_ == b.config_ && a.seed_ == b.seed_ && a.params_ == b.params_;
  }

 private:
  SirenConfig config_;
  std::uint64_t seed_ = 0;
  // Max-aligned so Eigen's vectorization peel, and with it the rounding of
  // reductions over weights, does not depend on where the buffer lands.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
  std::vector<std::size_t> offsets_;
};

/// First layer ~ U(-1/d_in, 1/d_in); deeper layers ~ U(-sqrt(6/n)/w0, sqrt(6/n)/w0)
/// with n the fan-in (w0 = 1 for ReLU variants); zero biases. Layer l draws
/// from the sub-stream derive_seed(seed, l).
SirenNet init_siren(const SirenConfig& config, std::uint64_t seed);

/// Positional encoding used by relu_pe: raw coordinates followed by
/// sin(2^k pi c), cos(2^k pi c) for each coordinate c and octave k.
Eigen::MatrixXd encode_inputs(const SirenConfig& config, const Eigen::MatrixXd& coords);

Eigen::MatrixXd forward(const SirenNet& net, const Eigen::MatrixXd& coords);

/// Gradient of sum_n <forward(coords)_n, upstream_n> w.r.t. all parameters,
/// in the flat parameter layout.
std::vector<double> grad_params(const SirenNet& net, const Eigen::MatrixXd& coords,
                                const Eigen::MatrixXd& upstream);

/// Per-sample Jacobians d output / d coords (out_dim x in_dim), by forward-mode
/// propagation of input tangents.
std::vector<Eigen::MatrixXd> grad_inputs(const SirenNet& net, const Eigen::MatrixXd& coords);

/// Vector-Jacobian product: column n is J_n^T upstream_n (in_dim x N).
Eigen::MatrixXd input_vjp(const SirenNet& net, const Eigen::MatrixXd& coords,
                          const Eigen::MatrixXd& upstream);

/// Activations of one forward pass, kept for a subsequent backward pass.
class ForwardTape {
 public:
  ForwardTape(const SirenNet& net, const Eigen::MatrixXd& coords);

  const Eigen::MatrixXd& output() const { return output_; }

  /// Backpropagates `upstream` (out_dim x N). Parameter gradients are added
  /// into `param_grad` when it is non-empty; input gradients are written to
  /// `input_grad` when it is non-null.
  void backward(const Eigen::MatrixXd& upstream, std::span<double> param_grad,
                Eigen::MatrixXd* input_grad) const;

 private:
  const SirenNet* net_;
  Eigen::MatrixXd coords_;
  Eigen::MatrixXd encoded_;
  std::vector<Eigen::MatrixXd> hidden_;  // activation of hidden layer l
  std::vector<Eigen::MatrixXd> slope_;   // d activation / d pre-activation
  Eigen::MatrixXd output_;
};

std::string describe(const SirenConfig& config);

}  // namespace inrprop
