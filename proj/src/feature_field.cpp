#include "inrprop/feature_field.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "inrprop/adam.hpp"
#include "inrprop/error.hpp"
#include "inrprop/rng.hpp"

namespace inrprop {

namespace {

constexpr std::uint64_t kSamplingStream = 0x5A4D;
constexpr std::uint64_t kNetStream = 0x4E45;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Eigen picks its vectorization peel from the data address, so reductions
// over a std::vector's buffer can round differently from run to run.
// Copying into Eigen-owned (max-aligned) storage keeps results bit-stable.
Eigen::VectorXd aligned_copy(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// HR pixel offsets of every tap of an LR cell's receptive field.
struct ReceptiveField {
  const Downsampler& ds;
  Canvas hr;

  void fill(int cy, int cx, double tn, const FeatureField& field, Eigen::Matrix3Xd& coords,
            Eigen::Index col) const {
    for (int i = 0; i < ds.kernel_h; ++i) {
      const int y = std::min(cy * ds.stride_y + i, hr.height - 1);
      for (int j = 0; j < ds.kernel_w; ++j) {
        const int x = std::min(cx * ds.stride_x + j, hr.width - 1);
        const Eigen::Vector3d c = field.normalize(x, y, 0.0);
        coords(0, col) = c(0);
        coords(1, col) = c(1);
        coords(2, col) = tn;
        ++col;
      }
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Downsampler

Downsampler Downsampler::for_resolution(Canvas hr, int lr_height, int lr_width) {
  if (lr_height < 1 || lr_width < 1) throw ConfigError("downsampler: LR grid must be non-empty");
  if (hr.height < lr_height || hr.width < lr_width)
    throw ConfigError("downsampler: HR size " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                      " is smaller than the supervision grid " + std::to_string(lr_width) + "x" +
                      std::to_string(lr_height));
  Downsampler d;
  d.stride_y = hr.height / lr_height;
  d.stride_x = hr.width / lr_width;
  d.kernel_h = d.stride_y + (hr.height % lr_height > 0 ? 1 : 0);
  d.kernel_w = d.stride_x + (hr.width % lr_width > 0 ? 1 : 0);
  d.raw.assign(static_cast<std::size_t>(d.taps()), 1.0);
  return d;
}

std::vector<double> Downsampler::effective() const {
  double sum = 0.0;
  for (double r : raw) sum += std::abs(r);
  if (!(sum > 0.0) || !std::isfinite(sum)) throw DivergenceError("downsampler kernel has no mass");
  std::vector<double> eff(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) eff[i] = std::abs(raw[i]) / sum;
  return eff;
}

bool Downsampler::is_simplex() const {
  double sum = 0.0;
  for (double r : raw) sum += std::abs(r);
  if (!(sum > 0.0) || !std::isfinite(sum)) return false;
  double total = 0.0;
  for (double e : effective()) {
    if (e < 0.0) return false;
    total += e;
  }
  return std::abs(total - 1.0) < 1e-12;
}

Eigen::VectorXd downsample(const Eigen::MatrixXd& hr_patch, const Downsampler& d) {
  if (hr_patch.cols() != d.taps())
    throw ContractViolation("downsample: patch has " + std::to_string(hr_patch.cols()) + " taps, kernel has " +
                            std::to_string(d.taps()));
  const std::vector<double> eff = d.effective();
  return hr_patch * Eigen::Map<const Eigen::VectorXd>(eff.data(), static_cast<Eigen::Index>(eff.size()));
}

// ---------------------------------------------------------------------------
// FeatureField

FeatureField::FeatureField(SirenNet net, Downsampler downsampler, Canvas hr, int frames, std::string video_id)
    : net_(std::move(net)),
      downsampler_(std::move(downsampler)),
      hr_(hr),
      frames_(frames),
      video_id_(std::move(video_id)),
      map_x_(hr.width),
      map_y_(hr.height),
      map_t_(frames) {
  if (net_.config().in_dim != 3) throw ConfigError("feature field network must take (x, y, t)");
  if (hr.width < 1 || hr.height < 1 || frames < 1) throw ConfigError("feature field: empty canvas or no frames");
  if (downsampler_.raw.size() != static_cast<std::size_t>(downsampler_.taps()))
    throw ConfigError("feature field: downsampler kernel size mismatch");
}

Eigen::Vector3d FeatureField::normalize(double x, double y, double t) const {
  return {map_x_.to_unit(x), map_y_.to_unit(y), map_t_.to_unit(t)};
}

Eigen::Matrix3Xd FeatureField::normalize(const Eigen::Matrix2Xd& points, double t) const {
  Eigen::Matrix3Xd c(3, points.cols());
  const double tn = map_t_.to_unit(t);
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    c(0, i) = map_x_.to_unit(points(0, i));
    c(1, i) = map_y_.to_unit(points(1, i));
    c(2, i) = tn;
  }
  return c;
}

Eigen::MatrixXd FeatureField::query(const Eigen::Matrix2Xd& points, double t) const {
  return forward(net_, normalize(points, t));
}

FeatureSource::Linearization FeatureField::linearize(const Eigen::Matrix2Xd& points, double t) const {
  auto tape = std::make_shared<ForwardTape>(net_, normalize(points, t));
  Linearization lin;
  lin.values = tape->output();
  const double sx = map_x_.unit_per_pixel();
  const double sy = map_y_.unit_per_pixel();
  lin.pullback = [tape, sx, sy](const Eigen::MatrixXd& upstream) {
    Eigen::MatrixXd g;
    tape->backward(upstream, {}, &g);
    Eigen::Matrix2Xd out(2, g.cols());
    out.row(0) = g.row(0) * sx;
    out.row(1) = g.row(1) * sy;
    return out;
  };
  return lin;
}

FeatureQuery FeatureField::query_feature(double x, double y, double t) const {
  Eigen::Matrix2Xd p(2, 1);
  p << x, y;
  FeatureQuery q;
  q.value = query(p, t).col(0);
  q.extrapolated = !hr_.contains({x, y}) || t < 0.0 || t > frames_ - 1.0;
  return q;
}

Eigen::MatrixXd FeatureField::query_jacobian(double x, double y, double t) const {
  Eigen::MatrixXd c(3, 1);
  c.col(0) = normalize(x, y, t);
  Eigen::MatrixXd j = grad_inputs(net_, c).front();
  j.col(0) *= map_x_.unit_per_pixel();
  j.col(1) *= map_y_.unit_per_pixel();
  j.col(2) *= map_t_.unit_per_pixel();
  return j;
}

// ---------------------------------------------------------------------------
// Fitting

void FieldFitConfig::validate() const {
  if (epochs < 1) throw ConfigError("field fit: epochs must be >= 1");
  if (cells_per_step < 1) throw ConfigError("field fit: cells_per_step must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("field fit: steps_per_epoch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("field fit: lr must be > 0");
  if (hr_size < 1 || hr_width < 0) throw ConfigError("field fit: bad HR size");
  net_config(1).validate();
}

SirenConfig FieldFitConfig::net_config(std::uint32_t feature_dim) const {
  SirenConfig c;
  c.in_dim = 3;
  c.hidden_dim = hidden_dim;
  c.n_hidden_layers = n_hidden_layers;
  c.out_dim = feature_dim;
  c.omega0 = omega0;
  c.activation = activation;
  c.n_frequencies = activation == Activation::relu_pe ? n_frequencies : 0;
  return c;
}

Canvas FieldFitConfig::hr_canvas(const FeatureVolume& volume) const {
  Canvas hr;
  hr.height = hr_size;
  hr.width = hr_width > 0 ? hr_width
                          : static_cast<int>(std::lround(static_cast<double>(hr_size) * volume.width / volume.height));
  return hr;
}

CellBatchLoss cell_batch_loss(const FeatureField& field, const FeatureVolume& volume, std::uint32_t t,
                              std::span<const int> cells) {
  const Downsampler& kernel = field.downsampler();
  const SirenNet& net = field.net();
  const Eigen::Index taps = kernel.taps();
  const Eigen::Index d = volume.dim;
  const auto n = static_cast<Eigen::Index>(cells.size());
  if (n == 0) throw ContractViolation("cell batch is empty");
  if (field.feature_dim() != d) throw ContractViolation("cell batch: feature dimension mismatch");
  if (t >= volume.frames) throw ContractViolation("cell batch: frame out of range");
  const int width = static_cast<int>(volume.width);
  const int lr_cells = static_cast<int>(volume.height) * width;
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(d));

  Eigen::Matrix3Xd coords(3, n * taps);
  Eigen::MatrixXd target(d, n);
  const double tn = field.normalize(0.0, 0.0, t)(2);
  const ReceptiveField rf{kernel, field.canvas()};
  for (Eigen::Index c = 0; c < n; ++c) {
    const int cell = cells[static_cast<std::size_t>(c)];
    if (cell < 0 || cell >= lr_cells) throw ContractViolation("cell batch: cell index out of range");
    const int cy = cell / width;
    const int cx = cell % width;
    rf.fill(cy, cx, tn, field, coords, c * taps);
    const auto f = volume.at(t, static_cast<std::uint32_t>(cy), static_cast<std::uint32_t>(cx));
    for (Eigen::Index k = 0; k < d; ++k) target(k, c) = f[static_cast<std::size_t>(k)];
  }

  const Eigen::VectorXd eff_v = aligned_copy(kernel.effective());
  ForwardTape tape(net, coords);
  const Eigen::MatrixXd& out = tape.output();
  Eigen::MatrixXd pred(d, n);
  for (Eigen::Index c = 0; c < n; ++c) pred.col(c).noalias() = out.middleCols(c * taps, taps) * eff_v;

  const Eigen::MatrixXd residual = pred - target;
  CellBatchLoss result;
  result.loss = residual.squaredNorm() * norm;
  if (!std::isfinite(result.loss)) return result;

  const Eigen::MatrixXd g_pred = residual * (2.0 * norm);
  Eigen::MatrixXd upstream(d, n * taps);
  Eigen::VectorXd g_eff = Eigen::VectorXd::Zero(taps);
  for (Eigen::Index c = 0; c < n; ++c) {
    upstream.middleCols(c * taps, taps).noalias() = g_pred.col(c) * eff_v.transpose();
    g_eff.noalias() += out.middleCols(c * taps, taps).transpose() * g_pred.col(c);
  }
  result.net_grad.assign(net.params().size(), 0.0);
  tape.backward(upstream, result.net_grad, nullptr);

  // d eff_i / d raw_j = sign(raw_j) (delta_ij - eff_i) / sum|raw|
  double mass = 0.0;
  for (double r : kernel.raw) mass += std::abs(r);
  const double mean_g = g_eff.dot(eff_v);
  result.kernel_grad.resize(kernel.raw.size());
  for (Eigen::Index j = 0; j < taps; ++j)
    result.kernel_grad[static_cast<std::size_t>(j)] =
        sign(kernel.raw[static_cast<std::size_t>(j)]) * (g_eff(j) - mean_g) / mass;
  return result;
}

FieldFit fit_feature_field(const FeatureVolume& volume, const FieldFitConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_norms(volume, 0.1);
  const Canvas hr = cfg.hr_canvas(volume);
  Downsampler ds = Downsampler::for_resolution(hr, static_cast<int>(volume.height), static_cast<int>(volume.width));
  FeatureField field(init_siren(cfg.net_config(volume.dim), derive_seed(cfg.seed, kNetStream)), ds, hr,
                     static_cast<int>(volume.frames));

  SirenNet& net = field.mutable_net();
  Downsampler& kernel = field.mutable_downsampler();
  AdamState net_opt = AdamState::for_size(net.params().size(), cfg.lr);
  AdamState kernel_opt = AdamState::for_size(kernel.raw.size(), cfg.lr);
  CounterRng rng(derive_seed(cfg.seed, kSamplingStream));

  const int lr_cells = static_cast<int>(volume.height * volume.width);
  const int n_cells = std::min(cfg.cells_per_step, lr_cells);
  std::vector<int> order(static_cast<std::size_t>(lr_cells));

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const auto t = static_cast<std::uint32_t>(rng.below(volume.frames));
      // partial Fisher-Yates over the frame's cells
      std::iota(order.begin(), order.end(), 0);
      if (n_cells < lr_cells) {
        for (int i = 0; i < n_cells; ++i) {
          const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(lr_cells - i)));
          std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
      }
      const CellBatchLoss batch =
          cell_batch_loss(field, volume, t, std::span<const int>(order.data(), static_cast<std::size_t>(n_cells)));
      if (!std::isfinite(batch.loss)) throw DivergenceError("feature field loss is not finite", epoch);
      epoch_loss += batch.loss;
      try {
        adam_step(net.params(), batch.net_grad, net_opt);
        adam_step(kernel.raw, batch.kernel_grad, kernel_opt);
      } catch (const DivergenceError&) {
        throw DivergenceError("feature field gradient is not finite", epoch);
      }
      if (!kernel.is_simplex()) throw DivergenceError("downsampler kernel left the simplex", epoch);
    }
    epoch_loss /= cfg.steps_per_epoch;
    trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, cfg.epochs, epoch_loss);
  }
  return FieldFit{std::move(field), std::move(trace)};
}

double reconstruction_loss(const FeatureField& field, const FeatureVolume& volume) {
  const Downsampler& ds = field.downsampler();
  const Canvas hr = field.canvas();
  const Eigen::Index taps = ds.taps();
  const Eigen::Index d = volume.dim;
  if (field.feature_dim() != d) throw ContractViolation("reconstruction_loss: feature dimension mismatch");
  const Eigen::VectorXd eff_v = aligned_copy(ds.effective());
  const ReceptiveField rf{ds, hr};

  const int width = static_cast<int>(volume.width);
  const int cells = static_cast<int>(volume.height) * width;
  constexpr int kChunk = 512;
  double total = 0.0;
  for (std::uint32_t t = 0; t < volume.frames; ++t) {
    const double tn = field.normalize(0.0, 0.0, t)(2);
    for (int start = 0; start < cells; start += kChunk) {
      const int n = std::min(kChunk, cells - start);
      Eigen::Matrix3Xd coords(3, n * taps);
      for (int c = 0; c < n; ++c) rf.fill((start + c) / width, (start + c) % width, tn, field, coords, c * taps);
      const Eigen::MatrixXd out = forward(field.net(), coords);
      for (int c = 0; c < n; ++c) {
        const int cell = start + c;
        const auto f = volume.at(t, static_cast<std::uint32_t>(cell / width), static_cast<std::uint32_t>(cell % width));
        const Eigen::VectorXd p = out.middleCols(c * taps, taps) * eff_v;
        for (Eigen::Index k = 0; k < d; ++k) {
          const double r = p(k) - f[static_cast<std::size_t>(k)];
          total += r * r;
        }
      }
    }
  }
  return total / (static_cast<double>(volume.cell_count()) * static_cast<double>(d));
}

std::string ActivationChoice::label() const {
  if (activation == Activation::relu_pe) return "relu_pe(L=" + std::to_string(n_frequencies) + ")";
  return std::string(to_string(activation));
}

std::vector<ArchitectureRow> compare_architectures(const FeatureVolume& volume, const FieldFitConfig& cfg,
                                                   std::span<const ActivationChoice> activations) {
  std::vector<ArchitectureRow> rows;
  for (const ActivationChoice& choice : activations) {
    FieldFitConfig c = cfg;
    c.activation = choice.activation;
    c.n_frequencies = choice.n_frequencies;
    FieldFit fit = fit_feature_field(volume, c);
    ArchitectureRow row;
    row.label = choice.label();
    row.param_count = fit.field.net().params().size();
    row.final_loss = fit.loss_trace.back();
    row.rmse = std::sqrt(reconstruction_loss(fit.field, volume));
    row.loss_trace = std::move(fit.loss_trace);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace inrprop
