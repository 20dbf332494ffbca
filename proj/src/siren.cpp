#include "inrprop/siren.hpp"

#include <malloc.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "fast_trig.hpp"
#include "inrprop/error.hpp"
#include "inrprop/rng.hpp"

namespace inrprop {

namespace {

// Training allocates and frees many multi-megabyte matrices per step. With
// glibc's default mmap threshold each of those is a fresh mapping and a round
// of page faults, which doubles the wall time on small machines.
bool keep_large_blocks_on_heap() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}

void require_rows(const Eigen::MatrixXd& m, Eigen::Index rows, const char* what) {
  if (m.rows() != rows) {
    std::ostringstream os;
    os << what << ": expected " << rows << " rows, got " << m.rows();
    throw ContractViolation(os.str());
  }
}

bool is_sine(const SirenConfig& c) { return c.activation == Activation::sine; }

// h = act(z + bias), slope = d act / d(pre-activation). z is overwritten by h.
void activate(const SirenConfig& config, Eigen::MatrixXd& z, const Eigen::Ref<const Eigen::VectorXd>& bias,
              Eigen::MatrixXd* slope) {
  if (is_sine(config)) {
    if (slope) slope->resize(z.rows(), z.cols());
    detail::sine_layer(z.data(), bias.data(), static_cast<std::size_t>(z.rows()), static_cast<std::size_t>(z.cols()),
                       config.omega0, slope ? slope->data() : nullptr);
  } else {
    z.colwise() += bias;
    if (slope) *slope = (z.array() > 0.0).cast<double>().matrix();
    z = z.cwiseMax(0.0);
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::sine: return "sine";
    case Activation::relu: return "relu";
    case Activation::relu_pe: return "relu_pe";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  if (name == "sine" || name == "siren") return Activation::sine;
  if (name == "relu") return Activation::relu;
  if (name == "relu_pe") return Activation::relu_pe;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void SirenConfig::validate() const {
  if (in_dim < 1 || hidden_dim < 1 || n_hidden_layers < 1 || out_dim < 1)
    throw ConfigError("SirenConfig: all layer counts must be >= 1");
  if (!(omega0 > 0.0) || !std::isfinite(omega0)) throw ConfigError("SirenConfig: omega0 must be > 0");
  if (activation == Activation::relu_pe && n_frequencies < 1)
    throw ConfigError("SirenConfig: relu_pe requires n_frequencies >= 1");
  if (static_cast<std::uint32_t>(activation) > 2) throw ConfigError("SirenConfig: bad activation");
}

std::uint32_t SirenConfig::encoded_dim() const {
  if (activation == Activation::relu_pe) return in_dim * (1 + 2 * n_frequencies);
  return in_dim;
}

std::size_t SirenConfig::parameter_count() const {
  std::size_t total = 0;
  std::size_t fan_in = encoded_dim();
  for (std::uint32_t l = 0; l < n_hidden_layers; ++l) {
    total += fan_in * hidden_dim + hidden_dim;
    fan_in = hidden_dim;
  }
  return total + fan_in * out_dim + out_dim;
}

std::string describe(const SirenConfig& c) {
  std::ostringstream os;
  os << to_string(c.activation) << " " << c.in_dim << "->" << c.hidden_dim << "x" << c.n_hidden_layers
     << "->" << c.out_dim << " w0=" << c.omega0;
  if (c.activation == Activation::relu_pe) os << " L=" << c.n_frequencies;
  return os.str();
}

SirenNet::SirenNet(const SirenConfig& config, std::uint64_t seed, std::vector<double> params)
    : config_(config), seed_(seed), params_(params.begin(), params.end()) {
  config_.validate();
  if (params_.size() != config_.parameter_count())
    throw ContractViolation("SirenNet: parameter buffer has " + std::to_string(params_.size()) +
                            " values, config needs " + std::to_string(config_.parameter_count()));
  std::size_t off = 0;
  for (int l = 0; l < layer_count(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(fan_in(l) * fan_out(l) + fan_out(l));
  }
}

Eigen::Index SirenNet::fan_in(int layer) const {
  return layer == 0 ? config_.encoded_dim() : config_.hidden_dim;
}

Eigen::Index SirenNet::fan_out(int layer) const {
  return layer == layer_count() - 1 ? config_.out_dim : config_.hidden_dim;
}

std::size_t SirenNet::bias_offset(int layer) const {
  return weight_offset(layer) + static_cast<std::size_t>(fan_in(layer) * fan_out(layer));
}

Eigen::Map<const RowMatrix> SirenNet::weight(int layer) const {
  return {params_.data() + weight_offset(layer), fan_out(layer), fan_in(layer)};
}
Eigen::Map<RowMatrix> SirenNet::weight(int layer) {
  return {params_.data() + weight_offset(layer), fan_out(layer), fan_in(layer)};
}
Eigen::Map<const Eigen::VectorXd> SirenNet::bias(int layer) const {
  return {params_.data() + bias_offset(layer), fan_out(layer)};
}
Eigen::Map<Eigen::VectorXd> SirenNet::bias(int layer) {
  return {params_.data() + bias_offset(layer), fan_out(layer)};
}

SirenNet init_siren(const SirenConfig& config, std::uint64_t seed) {
  config.validate();
  SirenNet net(config, seed, std::vector<double>(config.parameter_count(), 0.0));
  const double w0 = is_sine(config) ? config.omega0 : 1.0;
  for (int l = 0; l < net.layer_count(); ++l) {
    CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(l)));
    const auto n = static_cast<double>(net.fan_in(l));
    const double bound = l == 0 ? 1.0 / n : std::sqrt(6.0 / n) / w0;
    auto w = net.weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  }
  return net;
}

Eigen::MatrixXd encode_inputs(const SirenConfig& config, const Eigen::MatrixXd& coords) {
  require_rows(coords, config.in_dim, "encode_inputs");
  if (config.activation != Activation::relu_pe) return coords;
  const Eigen::Index in = config.in_dim;
  const Eigen::Index octaves = config.n_frequencies;
  Eigen::MatrixXd enc(config.encoded_dim(), coords.cols());
  enc.topRows(in) = coords;
  for (Eigen::Index j = 0; j < in; ++j) {
    for (Eigen::Index k = 0; k < octaves; ++k) {
      const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
      const Eigen::Index row = in + 2 * (j * octaves + k);
      enc.row(row) = (f * coords.row(j).array()).sin().matrix();
      enc.row(row + 1) = (f * coords.row(j).array()).cos().matrix();
    }
  }
  return enc;
}

Eigen::MatrixXd forward(const SirenNet& net, const Eigen::MatrixXd& coords) {
  const auto& config = net.config();
  Eigen::MatrixXd a = encode_inputs(config, coords);
  for (int l = 0; l < net.layer_count(); ++l) {
    Eigen::MatrixXd z = net.weight(l) * a;
    if (l + 1 < net.layer_count()) {
      activate(config, z, net.bias(l), nullptr);
    } else {
      z.colwise() += net.bias(l);
    }
    a = std::move(z);
  }
  return a;
}

ForwardTape::ForwardTape(const SirenNet& net, const Eigen::MatrixXd& coords)
    : net_(&net), coords_(coords) {
  [[maybe_unused]] static const bool tuned = keep_large_blocks_on_heap();
  const auto& config = net.config();
  encoded_ = encode_inputs(config, coords);
  const int hidden = net.layer_count() - 1;
  hidden_.resize(static_cast<std::size_t>(hidden));
  slope_.resize(static_cast<std::size_t>(hidden));
  const Eigen::MatrixXd* a = &encoded_;
  for (int l = 0; l < hidden; ++l) {
    auto& h = hidden_[static_cast<std::size_t>(l)];
    h.noalias() = net.weight(l) * (*a);
    activate(config, h, net.bias(l), &slope_[static_cast<std::size_t>(l)]);
    a = &h;
  }
  output_.noalias() = net.weight(hidden) * (*a);
  output_.colwise() += net.bias(hidden);
}

void ForwardTape::backward(const Eigen::MatrixXd& upstream, std::span<double> param_grad,
                           Eigen::MatrixXd* input_grad) const {
  const SirenNet& net = *net_;
  const auto& config = net.config();
  if (upstream.rows() != output_.rows() || upstream.cols() != output_.cols())
    throw ContractViolation("backward: upstream shape does not match forward output");
  if (!param_grad.empty() && param_grad.size() != net.params().size())
    throw ContractViolation("backward: gradient buffer size mismatch");

  const Eigen::MatrixXd* delta = &upstream;
  Eigen::MatrixXd buf_a, buf_b;
  RowMatrix gw_tmp;
  Eigen::VectorXd gb_tmp;
  Eigen::MatrixXd* prev = &buf_a;
  for (int l = net.layer_count() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a = l == 0 ? encoded_ : hidden_[static_cast<std::size_t>(l - 1)];
    if (!param_grad.empty()) {
      Eigen::Map<RowMatrix> gw(param_grad.data() + net.weight_offset(l), net.fan_out(l), net.fan_in(l));
      Eigen::Map<Eigen::VectorXd> gb(param_grad.data() + net.bias_offset(l), net.fan_out(l));
      // Products land in Eigen-owned storage first: the caller's buffer may
      // sit at any alignment, and the peel Eigen chooses for it changes the
      // rounding of the product. The element-wise add is exact either way.
      gw_tmp.noalias() = (*delta) * a.transpose();
      gb_tmp.noalias() = delta->rowwise().sum();
      gw += gw_tmp;
      gb += gb_tmp;
    }
    if (l == 0 && input_grad == nullptr) return;
    prev->noalias() = net.weight(l).transpose() * (*delta);
    if (l > 0) {
      prev->array() *= slope_[static_cast<std::size_t>(l - 1)].array();
      delta = prev;
      prev = prev == &buf_a ? &buf_b : &buf_a;
    }
  }
  const Eigen::MatrixXd& grad_encoded = *prev;
  if (config.activation != Activation::relu_pe) {
    *input_grad = grad_encoded;
    return;
  }
  const Eigen::Index in = config.in_dim;
  const Eigen::Index octaves = config.n_frequencies;
  *input_grad = grad_encoded.topRows(in);
  for (Eigen::Index j = 0; j < in; ++j) {
    for (Eigen::Index k = 0; k < octaves; ++k) {
      const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
      const Eigen::Index row = in + 2 * (j * octaves + k);
      const Eigen::ArrayXd arg = f * coords_.row(j).array().transpose();
      const Eigen::ArrayXd gs = grad_encoded.row(row).transpose().array();
      const Eigen::ArrayXd gc = grad_encoded.row(row + 1).transpose().array();
      input_grad->row(j).array() += (f * (gs * arg.cos() - gc * arg.sin())).transpose();
    }
  }
}

std::vector<double> grad_params(const SirenNet& net, const Eigen::MatrixXd& coords,
                                const Eigen::MatrixXd& upstream) {
  ForwardTape tape(net, coords);
  std::vector<double> grad(net.params().size(), 0.0);
  tape.backward(upstream, grad, nullptr);
  return grad;
}

Eigen::MatrixXd input_vjp(const SirenNet& net, const Eigen::MatrixXd& coords,
                          const Eigen::MatrixXd& upstream) {
  ForwardTape tape(net, coords);
  Eigen::MatrixXd g;
  tape.backward(upstream, {}, &g);
  return g;
}

std::vector<Eigen::MatrixXd> grad_inputs(const SirenNet& net, const Eigen::MatrixXd& coords) {
  const auto& config = net.config();
  require_rows(coords, config.in_dim, "grad_inputs");
  const Eigen::Index n = coords.cols();
  const Eigen::Index in = config.in_dim;
  const Eigen::Index octaves = config.activation == Activation::relu_pe ? config.n_frequencies : 0;

  // Slopes of every hidden layer.
  std::vector<Eigen::MatrixXd> slopes;
  {
    Eigen::MatrixXd a = encode_inputs(config, coords);
    for (int l = 0; l + 1 < net.layer_count(); ++l) {
      Eigen::MatrixXd z = net.weight(l) * a;
      Eigen::MatrixXd s;
      activate(config, z, net.bias(l), &s);
      slopes.push_back(std::move(s));
      a = std::move(z);
    }
  }

  std::vector<Eigen::MatrixXd> jac(static_cast<std::size_t>(n), Eigen::MatrixXd(config.out_dim, in));
  for (Eigen::Index i = 0; i < in; ++i) {
    // tangent of the encoded input w.r.t. coordinate i
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(config.encoded_dim(), n);
    t.row(i).setOnes();
    for (Eigen::Index k = 0; k < octaves; ++k) {
      const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
      const Eigen::Index row = in + 2 * (i * octaves + k);
      const Eigen::ArrayXd arg = f * coords.row(i).array().transpose();
      t.row(row) = (f * arg.cos()).transpose().matrix();
      t.row(row + 1) = (-f * arg.sin()).transpose().matrix();
    }
    for (int l = 0; l < net.layer_count(); ++l) {
      Eigen::MatrixXd u = net.weight(l) * t;
      if (l + 1 < net.layer_count()) u = u.cwiseProduct(slopes[static_cast<std::size_t>(l)]);
      t = std::move(u);
    }
    for (Eigen::Index s = 0; s < n; ++s) jac[static_cast<std::size_t>(s)].col(i) = t.col(s);
  }
  return jac;
}

}  // namespace inrprop
