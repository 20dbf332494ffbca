#include "inrprop/flow_field.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "inrprop/adam.hpp"
#include "inrprop/error.hpp"
#include "inrprop/rng.hpp"

namespace inrprop {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

void FlowFitConfig::validate() const {
  if (epochs < 1) throw ConfigError("flow fit: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("flow fit: lr must be > 0");
  if (!(lambda_tv >= 0.0) || !(lambda_l1 >= 0.0)) throw ConfigError("flow fit: lambdas must be >= 0");
  if (sample_grid < 2 || tv_grid < 2) throw ConfigError("flow fit: lattices need at least 2 points per axis");
  net_config().validate();
}

SirenConfig FlowFitConfig::net_config() const {
  SirenConfig c;
  c.in_dim = 2;
  c.hidden_dim = hidden_dim;
  c.n_hidden_layers = 1;
  c.out_dim = 2;
  c.omega0 = omega0;
  c.activation = Activation::sine;
  return c;
}

void PairSpec::validate() const {
  if (!src || !tgt) throw ContractViolation("pair: missing feature field");
  if (src_t < 0 || src_t >= src->frame_count() || tgt_t < 0 || tgt_t >= tgt->frame_count())
    throw ContractViolation("pair: frame index out of range");
  if (src->feature_dim() != tgt->feature_dim())
    throw ContractViolation("pair: source and target feature dimensions differ");
  if (src->canvas() != tgt->canvas())
    throw ContractViolation("pair: source and target canvases differ; the sample lattice would fall outside the target");
}

std::uint64_t PairSpec::content_hash() const {
  const std::string key = src_id + '\x1f' + std::to_string(src_t) + '\x1f' + tgt_id + '\x1f' + std::to_string(tgt_t);
  return fnv1a64(key);
}

// ---------------------------------------------------------------------------

DisplacementField::DisplacementField(SirenNet net, PairMeta meta, std::vector<double> loss_trace)
    : net_(std::move(net)),
      meta_(std::move(meta)),
      loss_trace_(std::move(loss_trace)),
      map_x_(meta_.canvas.width),
      map_y_(meta_.canvas.height) {
  const auto& c = net_.config();
  if (c.in_dim != 2 || c.out_dim != 2) throw ConfigError("displacement network must map R^2 -> R^2");
  if (meta_.canvas.width < 1 || meta_.canvas.height < 1) throw ConfigError("displacement field: empty canvas");
}

Eigen::Matrix2Xd DisplacementField::normalize(const Eigen::Matrix2Xd& points) const {
  Eigen::Matrix2Xd u(2, points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    u(0, i) = map_x_.to_unit(points(0, i));
    u(1, i) = map_y_.to_unit(points(1, i));
  }
  return u;
}

Eigen::Vector2d DisplacementField::pixel_scale() const {
  return {map_x_.pixels_per_unit(), map_y_.pixels_per_unit()};
}

Eigen::Matrix2Xd DisplacementField::displacements(const Eigen::Matrix2Xd& points) const {
  const Eigen::MatrixXd out = forward(net_, normalize(points));
  return pixel_scale().asDiagonal() * out;
}

Point2 DisplacementField::displacement(const Point2& p) const {
  Eigen::Matrix2Xd m(2, 1);
  m << p.x, p.y;
  const Eigen::Matrix2Xd d = displacements(m);
  return {d(0, 0), d(1, 0)};
}

Eigen::Matrix2Xd canvas_lattice(Canvas canvas, int n) {
  if (n < 1) throw ContractViolation("lattice needs at least one point per axis");
  Eigen::Matrix2Xd pts(2, static_cast<Eigen::Index>(n) * n);
  const double sx = n > 1 ? (canvas.width - 1.0) / (n - 1) : 0.0;
  const double sy = n > 1 ? (canvas.height - 1.0) / (n - 1) : 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pts(0, i * n + j) = j * sx;
      pts(1, i * n + j) = i * sy;
    }
  }
  return pts;
}

// ---------------------------------------------------------------------------

FlowObjective::FlowObjective(const PairSpec& pair, const FlowFitConfig& cfg)
    : pair_(pair), cfg_(cfg), canvas_(pair.src ? pair.src->canvas() : Canvas{}) {
  pair_.validate();
  cfg_.validate();
  samples_ = canvas_lattice(canvas_, cfg_.sample_grid);
  tv_points_ = canvas_lattice(canvas_, cfg_.tv_grid);
  src_features_ = pair_.src->query(samples_, pair_.src_t);
}

FlowLoss FlowObjective::evaluate(const DisplacementField& disp, bool with_grad) const {
  const SirenNet& net = disp.net();
  const Eigen::Vector2d scale = disp.pixel_scale();
  const auto m = static_cast<double>(samples_.cols());

  FlowLoss loss;
  if (with_grad) loss.grad.assign(net.params().size(), 0.0);

  // Feature alignment and L1 on the sample lattice.
  ForwardTape tape(net, disp.normalize(samples_));
  const Eigen::Matrix2Xd delta_px = scale.asDiagonal() * tape.output();
  Eigen::Matrix2Xd q = samples_ + delta_px;
  Eigen::Array2Xd inside = Eigen::Array2Xd::Ones(2, q.cols());
  const double max_x = canvas_.width - 1.0;
  const double max_y = canvas_.height - 1.0;
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    if (q(0, i) < 0.0 || q(0, i) > max_x) {
      q(0, i) = std::clamp(q(0, i), 0.0, max_x);
      inside(0, i) = 0.0;
    }
    if (q(1, i) < 0.0 || q(1, i) > max_y) {
      q(1, i) = std::clamp(q(1, i), 0.0, max_y);
      inside(1, i) = 0.0;
    }
  }
  const FeatureSource::Linearization lin = pair_.tgt->linearize(q, pair_.tgt_t);
  const Eigen::MatrixXd residual = lin.values - src_features_;
  loss.feature = residual.squaredNorm() / m;
  loss.l1 = delta_px.cwiseAbs().sum() / m;

  // Anisotropic TV of the normalized output on the tv lattice.
  const int g = cfg_.tv_grid;
  std::unique_ptr<ForwardTape> tv_tape;
  if (cfg_.lambda_tv > 0.0 || !with_grad) tv_tape = std::make_unique<ForwardTape>(net, disp.normalize(tv_points_));
  Eigen::Matrix2Xd g_tv = Eigen::Matrix2Xd::Zero(2, tv_points_.cols());
  if (tv_tape) {
    const Eigen::MatrixXd& u = tv_tape->output();
    const double pairs = 2.0 * g * (g - 1);
    double tv = 0.0;
    auto edge = [&](Eigen::Index a, Eigen::Index b) {
      for (int c = 0; c < 2; ++c) {
        const double diff = u(c, b) - u(c, a);
        tv += std::abs(diff);
        const double s = sign(diff) / pairs;
        g_tv(c, b) += s;
        g_tv(c, a) -= s;
      }
    };
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        const Eigen::Index k = static_cast<Eigen::Index>(i) * g + j;
        if (j + 1 < g) edge(k, k + 1);
        if (i + 1 < g) edge(k, k + g);
      }
    }
    loss.tv = tv / pairs;
  }
  loss.total = loss.feature + cfg_.lambda_tv * loss.tv + cfg_.lambda_l1 * loss.l1;
  if (!with_grad) return loss;

  Eigen::Matrix2Xd g_delta = lin.pullback(residual * (2.0 / m));
  g_delta = (g_delta.array() * inside).matrix();
  for (Eigen::Index i = 0; i < delta_px.cols(); ++i) {
    for (int c = 0; c < 2; ++c) g_delta(c, i) += cfg_.lambda_l1 * sign(delta_px(c, i)) / m;
  }
  const Eigen::MatrixXd g_out = scale.asDiagonal() * g_delta;
  tape.backward(g_out, loss.grad, nullptr);
  if (tv_tape && cfg_.lambda_tv > 0.0) tv_tape->backward(cfg_.lambda_tv * g_tv, loss.grad, nullptr);
  return loss;
}

// ---------------------------------------------------------------------------

DisplacementField init_displacement(const PairSpec& pair, const FlowFitConfig& cfg) {
  pair.validate();
  cfg.validate();
  PairMeta meta{pair.src_id, pair.src_t, pair.tgt_id, pair.tgt_t, pair.src->canvas()};
  return DisplacementField(init_siren(cfg.net_config(), derive_seed(cfg.seed, pair.content_hash())), meta);
}

DisplacementField fit_displacement(const PairSpec& pair, const FlowFitConfig& cfg, const EpochCallback& on_epoch) {
  DisplacementField disp = init_displacement(pair, cfg);
  const FlowObjective objective(pair, cfg);
  AdamState opt = AdamState::for_size(disp.net().params().size(), cfg.lr);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    FlowLoss loss = objective.evaluate(disp, true);
    if (!std::isfinite(loss.total)) throw DivergenceError("flow loss is not finite", epoch);
    try {
      adam_step(disp.mutable_net().params(), loss.grad, opt);
    } catch (const DivergenceError&) {
      throw DivergenceError("flow gradient is not finite", epoch);
    }
    trace.push_back(loss.total);
    if (on_epoch) on_epoch(epoch, cfg.epochs, loss.total);
  }
  disp.set_loss_trace(std::move(trace));
  return disp;
}

FlowBatchResult fit_displacements_batch(const std::vector<PairSpec>& pairs, const FlowFitConfig& cfg, int threads) {
  FlowBatchResult result;
  result.fields.resize(pairs.size());
  std::vector<BatchError> errors(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        result.fields[i] = fit_displacement(pairs[i], cfg);
      } catch (const std::exception& e) {
        errors[i] = {i, e.what(), classify(e)};
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(pairs.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!result.fields[i]) {
      result.first_error = errors[i];
      break;
    }
  }
  return result;
}

double mean_displacement_magnitude(const DisplacementSource& disp, Canvas canvas, int n) {
  const Eigen::Matrix2Xd pts = canvas_lattice(canvas, n);
  const Eigen::Matrix2Xd d = disp.displacements(pts);
  return d.colwise().norm().mean();
}

}  // namespace inrprop
