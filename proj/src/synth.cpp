#include "inrprop/synth.hpp"

#include <cmath>
#include <numbers>

#include "inrprop/error.hpp"
#include "inrprop/rng.hpp"

namespace inrprop {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<double> random_unit(CounterRng& rng, std::uint32_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  while (n2 < 1e-6) {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.uniform(-1.0, 1.0);
      n2 += x * x;
    }
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

PatternKind pattern_from_string(const std::string& s) {
  if (s == "constant") return PatternKind::constant;
  if (s == "smooth_random") return PatternKind::smooth_random;
  if (s == "spike") return PatternKind::spike;
  if (s == "stripes") return PatternKind::stripes;
  throw SchemaError("pattern.kind", "unknown pattern '" + s + "'");
}

WarpKind warp_from_string(const std::string& s) {
  if (s == "none") return WarpKind::none;
  if (s == "rigid_shift") return WarpKind::rigid_shift;
  if (s == "smooth_sine") return WarpKind::smooth_sine;
  throw SchemaError("warp.kind", "unknown warp '" + s + "'");
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(path + key, "wrong type");
  }
}

}  // namespace

std::string to_string(PatternKind k) {
  switch (k) {
    case PatternKind::constant: return "constant";
    case PatternKind::smooth_random: return "smooth_random";
    case PatternKind::spike: return "spike";
    case PatternKind::stripes: return "stripes";
  }
  return "?";
}

std::string to_string(WarpKind k) {
  switch (k) {
    case WarpKind::none: return "none";
    case WarpKind::rigid_shift: return "rigid_shift";
    case WarpKind::smooth_sine: return "smooth_sine";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (frames < 1 || height < 1 || width < 1 || dim < 1) throw ConfigError("synth: all dimensions must be >= 1");
  switch (pattern.kind) {
    case PatternKind::smooth_random:
      if (!(pattern.min_wavelength >= 8.0)) throw ConfigError("synth: smooth_random wavelengths must be >= 8 px");
      if (!(pattern.max_wavelength >= pattern.min_wavelength))
        throw ConfigError("synth: max_wavelength must be >= min_wavelength");
      if (pattern.components < 1) throw ConfigError("synth: components must be >= 1");
      break;
    case PatternKind::spike:
      if (pattern.locations.empty()) throw ConfigError("synth: spike pattern needs at least one location");
      if (!(pattern.spike_width > 0.0)) throw ConfigError("synth: spike_width must be > 0");
      if (dim < 2) throw ConfigError("synth: spike pattern needs dim >= 2");
      break;
    case PatternKind::stripes:
      if (!(pattern.period > 0.0)) throw ConfigError("synth: stripe period must be > 0");
      if (dim < 2) throw ConfigError("synth: stripes need dim >= 2");
      break;
    case PatternKind::constant: break;
  }
  switch (warp.kind) {
    case WarpKind::none: break;
    case WarpKind::rigid_shift:
      if (!std::isfinite(warp.dx) || !std::isfinite(warp.dy) || std::hypot(warp.dx, warp.dy) > kMaxWarp)
        throw ConfigError("synth: shift magnitude must be <= 8 px");
      break;
    case WarpKind::smooth_sine:
      if (!(warp.amplitude >= 0.0) || warp.amplitude > kMaxWarp)
        throw ConfigError("synth: warp amplitude must be in [0, 8] px");
      if (!(warp.wavelength > 0.0)) throw ConfigError("synth: warp wavelength must be > 0");
      if (warp.amplitude * kTwoPi / warp.wavelength >= 1.0)
        throw ConfigError("synth: amplitude * 2pi / wavelength must be < 1 for an invertible warp");
      break;
  }
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  nlohmann::json p = {{"kind", to_string(s.pattern.kind)}};
  switch (s.pattern.kind) {
    case PatternKind::smooth_random:
      p["min_wavelength"] = s.pattern.min_wavelength;
      p["max_wavelength"] = s.pattern.max_wavelength;
      p["components"] = s.pattern.components;
      break;
    case PatternKind::spike: {
      nlohmann::json locs = nlohmann::json::array();
      for (const Point2& q : s.pattern.locations) locs.push_back({q.x, q.y});
      p["locations"] = locs;
      p["spike_width"] = s.pattern.spike_width;
      break;
    }
    case PatternKind::stripes: p["period"] = s.pattern.period; break;
    case PatternKind::constant: break;
  }
  nlohmann::json w = {{"kind", to_string(s.warp.kind)}};
  if (s.warp.kind == WarpKind::rigid_shift) {
    w["dx"] = s.warp.dx;
    w["dy"] = s.warp.dy;
  } else if (s.warp.kind == WarpKind::smooth_sine) {
    w["amplitude"] = s.warp.amplitude;
    w["wavelength"] = s.warp.wavelength;
  }
  j = {{"frames", s.frames}, {"height", s.height}, {"width", s.width}, {"dim", s.dim},
       {"seed", s.seed},     {"pattern", p},       {"warp", w}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  if (!j.is_object()) throw SchemaError("", "synth spec must be a JSON object");
  s = SynthSpec{};
  s.frames = get_field<std::uint32_t>(j, "frames", "", s.frames);
  s.height = get_field<std::uint32_t>(j, "height", "", s.height);
  s.width = get_field<std::uint32_t>(j, "width", "", s.width);
  s.dim = get_field<std::uint32_t>(j, "dim", "", s.dim);
  s.seed = get_field<std::uint64_t>(j, "seed", "", s.seed);
  if (j.contains("pattern")) {
    const auto& p = j.at("pattern");
    if (!p.is_object()) throw SchemaError("pattern", "must be an object");
    s.pattern.kind = pattern_from_string(get_field<std::string>(p, "kind", "pattern.", "smooth_random"));
    s.pattern.min_wavelength = get_field<double>(p, "min_wavelength", "pattern.", s.pattern.min_wavelength);
    s.pattern.max_wavelength = get_field<double>(p, "max_wavelength", "pattern.", s.pattern.max_wavelength);
    s.pattern.components = get_field<int>(p, "components", "pattern.", s.pattern.components);
    s.pattern.spike_width = get_field<double>(p, "spike_width", "pattern.", s.pattern.spike_width);
    s.pattern.period = get_field<double>(p, "period", "pattern.", s.pattern.period);
    if (p.contains("locations")) {
      const auto& locs = p.at("locations");
      if (!locs.is_array()) throw SchemaError("pattern.locations", "must be an array of [x, y]");
      for (std::size_t i = 0; i < locs.size(); ++i) {
        const auto& l = locs[i];
        if (!l.is_array() || l.size() != 2 || !l[0].is_number() || !l[1].is_number())
          throw SchemaError("pattern.locations[" + std::to_string(i) + "]", "must be [x, y]");
        s.pattern.locations.push_back({l[0].get<double>(), l[1].get<double>()});
      }
    }
  }
  if (j.contains("warp")) {
    const auto& w = j.at("warp");
    if (!w.is_object()) throw SchemaError("warp", "must be an object");
    s.warp.kind = warp_from_string(get_field<std::string>(w, "kind", "warp.", "none"));
    s.warp.dx = get_field<double>(w, "dx", "warp.", 0.0);
    s.warp.dy = get_field<double>(w, "dy", "warp.", 0.0);
    s.warp.amplitude = get_field<double>(w, "amplitude", "warp.", 0.0);
    s.warp.wavelength = get_field<double>(w, "wavelength", "warp.", s.warp.wavelength);
  }
}

// ---------------------------------------------------------------------------

WarpFunction::WarpFunction(WarpSpec spec, std::uint32_t width, std::uint32_t height)
    : spec_(spec), cx_(0.5 * (width - 1.0)), cy_(0.5 * (height - 1.0)) {}

Point2 WarpFunction::apply(const Point2& p) const {
  switch (spec_.kind) {
    case WarpKind::none: return p;
    case WarpKind::rigid_shift: return {p.x + spec_.dx, p.y + spec_.dy};
    case WarpKind::smooth_sine: {
      const double k = kTwoPi / spec_.wavelength;
      return {p.x + spec_.amplitude * std::sin(k * (p.y - cy_)), p.y + spec_.amplitude * std::sin(k * (p.x - cx_))};
    }
  }
  return p;
}

Point2 WarpFunction::inverse(const Point2& q) const {
  switch (spec_.kind) {
    case WarpKind::none: return q;
    case WarpKind::rigid_shift: return {q.x - spec_.dx, q.y - spec_.dy};
    case WarpKind::smooth_sine: break;
  }
  // Solve W(p) = q. J = [[1, a], [b, 1]] with a = dDx/dy, b = dDy/dx.
  const double k = kTwoPi / spec_.wavelength;
  const double amp = spec_.amplitude;
  Point2 p = q;
  for (int it = 0; it < 50; ++it) {
    const Point2 w = apply(p);
    const double rx = w.x - q.x;
    const double ry = w.y - q.y;
    if (std::abs(rx) < 1e-13 && std::abs(ry) < 1e-13) break;
    const double a = amp * k * std::cos(k * (p.y - cy_));
    const double b = amp * k * std::cos(k * (p.x - cx_));
    const double det = 1.0 - a * b;
    p.x -= (rx - a * ry) / det;
    p.y -= (ry - b * rx) / det;
  }
  return p;
}

Point2 WarpFunction::displacement(const Point2& p, int steps) const {
  Point2 q = p;
  for (int i = 0; i < steps; ++i) q = apply(q);
  return q - p;
}

double WarpFunction::max_slope() const {
  if (spec_.kind != WarpKind::smooth_sine) return 0.0;
  return spec_.amplitude * kTwoPi / spec_.wavelength;
}

Point2 WarpDisplacement::displacement(const Point2& p) const {
  const Point2 grid{p.x / scale_, p.y / scale_};
  const Point2 d = warp_.displacement(grid, steps_);
  return {d.x * scale_, d.y * scale_};
}

// ---------------------------------------------------------------------------

Pattern::Pattern(const PatternSpec& spec, std::uint32_t dim, std::uint64_t seed) : spec_(spec), dim_(dim) {
  CounterRng rng(derive_seed(seed, 0x5059));
  switch (spec.kind) {
    case PatternKind::constant: background_ = random_unit(rng, dim); break;
    case PatternKind::smooth_random:
      waves_.resize(dim);
      for (auto& channel : waves_) {
        for (int c = 0; c < spec.components; ++c) {
          const double wl = rng.uniform(spec.min_wavelength, spec.max_wavelength);
          const double theta = rng.uniform(0.0, kTwoPi);
          channel.push_back({std::cos(theta) * kTwoPi / wl, std::sin(theta) * kTwoPi / wl, rng.uniform(0.0, kTwoPi),
                             rng.uniform(0.5, 1.0)});
        }
      }
      break;
    case PatternKind::spike:
      background_ = random_unit(rng, dim);
      for (std::size_t i = 0; i < spec.locations.size(); ++i) spike_feats_.push_back(random_unit(rng, dim));
      break;
    case PatternKind::stripes: break;
  }
}

std::vector<double> Pattern::sample(double x, double y) const {
  std::vector<double> f(dim_, 0.0);
  switch (spec_.kind) {
    case PatternKind::constant: f = background_; break;
    case PatternKind::smooth_random:
      for (std::uint32_t d = 0; d < dim_; ++d)
        for (const Wave& w : waves_[d]) f[d] += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      break;
    case PatternKind::spike: {
      f = background_;
      const double inv = 1.0 / (2.0 * spec_.spike_width * spec_.spike_width);
      for (std::size_t i = 0; i < spec_.locations.size(); ++i) {
        const double dx = x - spec_.locations[i].x;
        const double dy = y - spec_.locations[i].y;
        const double g = std::exp(-(dx * dx + dy * dy) * inv);
        for (std::uint32_t d = 0; d < dim_; ++d) f[d] += g * (spike_feats_[i][d] - background_[d]);
      }
      break;
    }
    case PatternKind::stripes:
      for (std::uint32_t pair = 0; 2 * pair + 1 < dim_; ++pair) {
        // Pairs alternate x / y stripes; periods grow so lags are unambiguous.
        const double period = spec_.period * (1.0 + 0.5 * (pair / 2));
        const double u = (pair % 2 == 0 ? x : y) * kTwoPi / period + 0.7 * pair;
        f[2 * pair] = std::sin(u);
        f[2 * pair + 1] = std::cos(u);
      }
      break;
  }
  return f;
}

SynthVolume make_volume(const SynthSpec& spec) {
  spec.validate();
  const Pattern pattern(spec.pattern, spec.dim, spec.seed);
  SynthVolume out{FeatureVolume(spec.frames, spec.height, spec.width, spec.dim),
                  WarpFunction(spec.warp, spec.width, spec.height)};
  out.volume.source_tag = "synth " + to_string(spec.pattern.kind) + " warp=" + to_string(spec.warp.kind) +
                          " seed=" + std::to_string(spec.seed);
  for (std::uint32_t t = 0; t < spec.frames; ++t) {
    for (std::uint32_t y = 0; y < spec.height; ++y) {
      for (std::uint32_t x = 0; x < spec.width; ++x) {
        Point2 p{static_cast<double>(x), static_cast<double>(y)};
        for (std::uint32_t s = 0; s < t; ++s) p = out.warp.inverse(p);
        const std::vector<double> f = pattern.sample(p.x, p.y);
        double n2 = 0.0;
        for (double v : f) n2 += v * v;
        if (!(n2 > 1e-24)) throw ConfigError("synth: pattern vanishes at a sample; change the seed");
        const double inv = 1.0 / std::sqrt(n2);
        auto cell = out.volume.at(t, y, x);
        for (std::uint32_t d = 0; d < spec.dim; ++d) cell[d] = static_cast<float>(f[d] * inv);
      }
    }
  }
  return out;
}

double oracle_endpoint_error(const DisplacementSource& disp, const DisplacementSource& truth, Canvas canvas,
                             int margin, int stride) {
  if (stride < 1 || margin < 0) throw ContractViolation("endpoint error: bad lattice");
  double total = 0.0;
  long count = 0;
  for (int y = margin; y <= canvas.height - 1 - margin; y += stride) {
    for (int x = margin; x <= canvas.width - 1 - margin; x += stride) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      total += (disp.displacement(p) - truth.displacement(p)).norm();
      ++count;
    }
  }
  if (count == 0) throw ContractViolation("endpoint error: empty interior lattice");
  return total / static_cast<double>(count);
}

}  // namespace inrprop
