#include "inrprop/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "inrprop/error.hpp"

namespace inrprop {

BinaryMask::BinaryMask(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw ContractViolation("mask dimensions must be positive");
  bits.assign(static_cast<std::size_t>(w) * h, 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask disc_mask(Canvas canvas, double cx, double cy, double r) {
  BinaryMask m(canvas.width, canvas.height);
  for (int y = 0; y < canvas.height; ++y)
    for (int x = 0; x < canvas.width; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y);
  return m;
}

void InteriorConfig::validate() const {
  if (!(d_min >= 0.0) || !std::isfinite(d_min)) throw ConfigError("interior: d_min must be >= 0");
}

void KdeConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("kde: sigma must be > 0");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("kde: tau must be in (0, 1]");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher). Infinite
// samples contribute no parabola. Squared distances of integers stay exact.
void dt1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  auto meet = [f](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
  };
  std::size_t k = 0;
  bool any = false;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (!any) {
      any = true;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = meet(q, v[k]);
    while (s <= z[k]) {  // z[0] = -inf stops this at k = 0
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    std::fill(d, d + n, kInf);
    return;
  }
  std::size_t j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const int p = v[j];
    d[q] = static_cast<double>(q - p) * (q - p) + f[p];
  }
}

}  // namespace

std::vector<double> edt(const BinaryMask& mask) {
  // Work on a grid padded by one background pixel on every side.
  const int w = mask.width + 2;
  const int h = mask.height + 2;
  std::vector<double> g(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) g[static_cast<std::size_t>(y + 1) * w + (x + 1)] = kInf;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col_in(static_cast<std::size_t>(h)), col_out(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_in[static_cast<std::size_t>(y)] = g[static_cast<std::size_t>(y) * w + x];
    dt1d(col_in.data(), col_out.data(), h, v, z);
    for (int y = 0; y < h; ++y) g[static_cast<std::size_t>(y) * w + x] = col_out[static_cast<std::size_t>(y)];
  }
  std::vector<double> row_out(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    double* row = g.data() + static_cast<std::size_t>(y) * w;
    dt1d(row, row_out.data(), w, v, z);
    std::copy(row_out.begin(), row_out.end(), row);
  }

  std::vector<double> out(static_cast<std::size_t>(mask.width) * mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      out[mask.index(x, y)] = std::sqrt(g[static_cast<std::size_t>(y + 1) * w + (x + 1)]);
  return out;
}

InteriorPoints interior_points(const BinaryMask& mask, const InteriorConfig& cfg) {
  cfg.validate();
  if (mask.bits.size() != static_cast<std::size_t>(mask.width) * mask.height || mask.bits.empty())
    throw ContractViolation("mask buffer does not match its dimensions");
  if (mask.count() == 0) throw DegenerateMaskError("mask has no foreground pixels");
  const std::vector<double> d = edt(mask);
  auto collect = [&](double d_min) {
    std::vector<PixelIndex> pts;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(x, y) && d[mask.index(x, y)] >= d_min) pts.push_back({x, y});
    return pts;
  };
  InteriorPoints out;
  out.points = collect(cfg.d_min);
  out.d_min_used = cfg.d_min;
  if (out.points.empty() && cfg.d_min > 1.0) {
    out.points = collect(1.0);
    out.level = InteriorPoints::Level::unit_distance;
    out.d_min_used = 1.0;
  }
  if (out.points.empty()) {
    out.points = collect(0.0);
    out.level = InteriorPoints::Level::all_foreground;
    out.d_min_used = 0.0;
  }
  // Every foreground pixel has EDT >= 1, so this only triggers on bad input.
  if (out.points.empty()) throw DegenerateMaskError("no interior points after all fallbacks");
  return out;
}

PixelIndex round_to_pixel(const Point2& p, Canvas canvas) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ContractViolation("cannot rasterize a non-finite point");
  const double x = std::clamp(std::floor(p.x + 0.5), 0.0, canvas.width - 1.0);
  const double y = std::clamp(std::floor(p.y + 0.5), 0.0, canvas.height - 1.0);
  return {static_cast<int>(x), static_cast<int>(y)};
}

ProbabilityField kde_field(std::span<const Point2> points, Canvas canvas, double sigma) {
  if (points.empty()) throw ContractViolation("kde: no points to reconstruct from");
  if (canvas.width < 1 || canvas.height < 1) throw ContractViolation("kde: empty canvas");
  if (!(sigma > 0.0)) throw ConfigError("kde: sigma must be > 0");
  const int w = canvas.width;
  const int h = canvas.height;
  std::vector<double> hits(static_cast<std::size_t>(w) * h, 0.0);
  for (const Point2& p : points) {
    const PixelIndex q = round_to_pixel(p, canvas);
    hits[static_cast<std::size_t>(q.y) * w + q.x] += 1.0;
  }

  const int radius = static_cast<int>(4.0 * sigma + 0.5);
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));

  std::vector<double> tmp(hits.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = hits[static_cast<std::size_t>(y) * w + x];
      if (v == 0.0) continue;
      for (int k = std::max(-radius, -x); k <= std::min(radius, w - 1 - x); ++k)
        tmp[static_cast<std::size_t>(y) * w + x + k] += v * kernel[static_cast<std::size_t>(k + radius)];
    }
  }
  ProbabilityField field{w, h, std::vector<double>(hits.size(), 0.0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = std::max(-radius, -y); k <= std::min(radius, h - 1 - y); ++k)
        acc += tmp[static_cast<std::size_t>(y + k) * w + x] * kernel[static_cast<std::size_t>(k + radius)];
      field.values[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  const double peak = *std::max_element(field.values.begin(), field.values.end());
  for (double& v : field.values) v /= peak;
  return field;
}

BinaryMask threshold(const ProbabilityField& field, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("kde: tau must be in (0, 1]");
  BinaryMask m(field.width, field.height);
  for (std::size_t i = 0; i < field.values.size(); ++i) m.bits[i] = field.values[i] >= tau ? 1 : 0;
  return m;
}

KdeResult kde_reconstruct(std::span<const Point2> points, Canvas canvas, const KdeConfig& cfg) {
  cfg.validate();
  KdeResult r;
  r.field = kde_field(points, canvas, cfg.sigma);
  r.mask = threshold(r.field, cfg.tau);
  return r;
}

MaskPropagation propagate_mask(const BinaryMask& mask, const PairSpec& pair, const DisplacementSource& disp,
                               const MatchConfig& match_cfg, const InteriorConfig& interior_cfg,
                               const KdeConfig& kde_cfg) {
  MaskPropagation out;
  try {
    kde_cfg.validate();
    if (pair.src && mask.canvas() != pair.src->canvas())
      throw ContractViolation("mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                              " but the source field canvas is " + std::to_string(pair.src->canvas().width) + "x" +
                              std::to_string(pair.src->canvas().height));
    out.interior = interior_points(mask, interior_cfg);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    rethrow_in_stage("interior", e);
  }
  std::vector<Point2> src;
  src.reserve(out.interior.points.size());
  for (const PixelIndex& p : out.interior.points) src.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
  try {
    out.matches = match_points(src, pair, disp, match_cfg);
  } catch (const std::exception& e) {
    rethrow_in_stage("match", e);
  }
  std::vector<Point2> dst;
  dst.reserve(out.matches.size());
  for (const MatchResult& m : out.matches) dst.push_back(m.predicted);
  try {
    KdeResult k = kde_reconstruct(dst, pair.tgt->canvas(), kde_cfg);
    out.field = std::move(k.field);
    out.mask = std::move(k.mask);
  } catch (const std::exception& e) {
    rethrow_in_stage("kde", e);
  }
  return out;
}

}  // namespace inrprop
