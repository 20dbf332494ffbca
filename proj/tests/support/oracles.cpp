#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

using inrprop::Activation;
using inrprop::CounterRng;
using inrprop::SirenConfig;
using inrprop::SirenNet;

SirenConfig random_config(CounterRng& rng, Activation activation) {
  SirenConfig c;
  c.in_dim = 1 + static_cast<std::uint32_t>(rng.below(3));
  c.hidden_dim = 2 + static_cast<std::uint32_t>(rng.below(7));
  c.n_hidden_layers = 1 + static_cast<std::uint32_t>(rng.below(3));
  c.out_dim = 1 + static_cast<std::uint32_t>(rng.below(4));
  c.activation = activation;
  c.omega0 = activation == Activation::sine ? rng.uniform(1.0, 30.0) : 1.0;
  c.n_frequencies = activation == Activation::relu_pe ? 1 + static_cast<std::uint32_t>(rng.below(3)) : 0;
  return c;
}

SirenNet random_net(const SirenConfig& cfg, std::uint64_t seed) {
  SirenNet net = inrprop::init_siren(cfg, seed);
  CounterRng rng(seed ^ 0xB1A5ULL);
  for (int l = 0; l < net.layer_count(); ++l) {
    auto b = net.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.5, 0.5);
  }
  return net;
}

Eigen::MatrixXd random_coords(CounterRng& rng, Eigen::Index dim, Eigen::Index n) {
  Eigen::MatrixXd c(dim, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) c(i, j) = rng.uniform(-1.0, 1.0);
  return c;
}

namespace {

double inner(const SirenNet& net, const Eigen::MatrixXd& coords, const Eigen::MatrixXd& upstream) {
  return (inrprop::forward(net, coords).array() * upstream.array()).sum();
}

}  // namespace

std::vector<double> fd_param_grad(const SirenNet& net, const Eigen::MatrixXd& coords,
                                  const Eigen::MatrixXd& upstream, double h) {
  SirenNet probe = net;
  auto p = probe.params();
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = inner(probe, coords, upstream);
    p[i] = keep - h;
    const double down = inner(probe, coords, upstream);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_input_jacobian(const SirenNet& net, const Eigen::VectorXd& coord, double h) {
  const auto in = static_cast<Eigen::Index>(net.config().in_dim);
  const auto out = static_cast<Eigen::Index>(net.config().out_dim);
  Eigen::MatrixXd j(out, in);
  for (Eigen::Index k = 0; k < in; ++k) {
    Eigen::MatrixXd plus = coord, minus = coord;
    plus(k, 0) += h;
    minus(k, 0) -= h;
    j.col(k) = (inrprop::forward(net, plus) - inrprop::forward(net, minus)) / (2.0 * h);
  }
  return j;
}

double rel_error(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                 double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  const Eigen::Map<const Eigen::VectorXd> va(a.data(), static_cast<Eigen::Index>(a.size()));
  const Eigen::Map<const Eigen::VectorXd> vb(b.data(), static_cast<Eigen::Index>(b.size()));
  return rel_error(va, vb, floor);
}

std::vector<double> brute_force_edt(const std::vector<std::uint8_t>& bits, int width, int height) {
  std::vector<double> out(bits.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!bits[static_cast<std::size_t>(y) * width + x]) continue;
      // Nearest out-of-canvas pixel: one step beyond the closest border.
      double best2 = std::numeric_limits<double>::infinity();
      const double border = std::min({x + 1, y + 1, width - x, height - y});
      best2 = border * border;
      for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
          if (bits[static_cast<std::size_t>(v) * width + u]) continue;
          const double d2 = static_cast<double>(u - x) * (u - x) + static_cast<double>(v - y) * (v - y);
          best2 = std::min(best2, d2);
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = std::sqrt(best2);
    }
  }
  return out;
}

Eigen::MatrixXd FunctionSource::query(const Eigen::Matrix2Xd& points, double t) const {
  Eigen::MatrixXd out(dim_, points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) out.col(i) = fn_(points(0, i), points(1, i), t);
  return out;
}

inrprop::FeatureSource::Linearization FunctionSource::linearize(const Eigen::Matrix2Xd& points, double t) const {
  Linearization lin;
  lin.values = query(points, t);
  lin.pullback = [this, points, t](const Eigen::MatrixXd& upstream) {
    const double h = 1e-5;
    Eigen::Matrix2Xd g(2, points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
      const double x = points(0, i), y = points(1, i);
      const Eigen::VectorXd dx = (fn_(x + h, y, t) - fn_(x - h, y, t)) / (2 * h);
      const Eigen::VectorXd dy = (fn_(x, y + h, t) - fn_(x, y - h, t)) / (2 * h);
      g(0, i) = dx.dot(upstream.col(i));
      g(1, i) = dy.dot(upstream.col(i));
    }
    return g;
  };
  return lin;
}

BruteMatch brute_force_match(const Eigen::VectorXd& src_feature, const inrprop::FeatureSource& target, double t,
                             const inrprop::Point2* center, double sigma) {
  BruteMatch best{{0, 0}, -std::numeric_limits<double>::infinity()};
  const auto c = target.canvas();
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      Eigen::Matrix2Xd p(2, 1);
      p << x, y;
      const Eigen::VectorXd f = target.query(p, t).col(0);
      const double denom = f.norm() * src_feature.norm();
      double s = denom > 0.0 ? f.dot(src_feature) / denom : 0.0;
      if (center) {
        const double dx = x - center->x, dy = y - center->y;
        s *= std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
      if (s > best.score) best = {{static_cast<double>(x), static_cast<double>(y)}, s};
    }
  }
  return best;
}

namespace {

double scaled_distance(const inrprop::Point2& a, const inrprop::Point2& b, inrprop::Canvas canvas) {
  const double dx = (a.x - b.x) * 256.0 / canvas.width;
  const double dy = (a.y - b.y) * 256.0 / canvas.height;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::vector<double> brute_pck(const std::vector<inrprop::Point2>& pred, const std::vector<inrprop::Point2>& gt,
                              inrprop::Canvas canvas, const std::vector<double>& thresholds) {
  std::vector<double> out;
  for (double th : thresholds) {
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (scaled_distance(pred[i], gt[i], canvas) < th) ++correct;
    out.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
  }
  return out;
}

double brute_delta_avg(const std::vector<std::vector<inrprop::Point2>>& pred,
                       const std::vector<std::vector<inrprop::Point2>>& gt, inrprop::Canvas canvas,
                       const std::vector<double>& thresholds) {
  double sum = 0.0;
  for (double th : thresholds) {
    int correct = 0, total = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
      for (std::size_t i = 0; i < pred[f].size(); ++i) {
        ++total;
        if (scaled_distance(pred[f][i], gt[f][i], canvas) < th) ++correct;
      }
    }
    sum += static_cast<double>(correct) / static_cast<double>(total);
  }
  return sum / static_cast<double>(thresholds.size());
}

double brute_dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  int inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i] ? 1 : 0;
    sb += b[i] ? 1 : 0;
    inter += (a[i] && b[i]) ? 1 : 0;
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * inter / static_cast<double>(sa + sb);
}

inrprop::FeatureVolume random_unit_volume(std::uint32_t t, std::uint32_t h, std::uint32_t w, std::uint32_t d,
                                          std::uint64_t seed) {
  inrprop::FeatureVolume v(t, h, w, d);
  CounterRng rng(seed);
  for (std::size_t c = 0; c < v.cell_count(); ++c) {
    float* f = v.data.data() + c * d;
    double n2 = 0.0;
    for (std::uint32_t k = 0; k < d; ++k) {
      f[k] = static_cast<float>(rng.uniform(-1.0, 1.0));
      n2 += static_cast<double>(f[k]) * f[k];
    }
    const double n = std::sqrt(n2);
    for (std::uint32_t k = 0; k < d; ++k) f[k] = static_cast<float>(f[k] / n);
  }
  return v;
}

}  // namespace oracle
