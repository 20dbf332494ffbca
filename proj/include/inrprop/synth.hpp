#pragma once

// Synthetic feature volumes with known structure and known warps, used as
// oracles for fitting, flow and matching.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "inrprop/feature_source.hpp"
#include "inrprop/geometry.hpp"
#include "inrprop/volume.hpp"

namespace inrprop {

enum class PatternKind { constant, smooth_random, spike, stripes };
enum class WarpKind { none, rigid_shift, smooth_sine };

struct PatternSpec {
  PatternKind kind = PatternKind::smooth_random;
  // smooth_random: per-channel mixture of plane waves
  double min_wavelength = 8.0;
  double max_wavelength = 32.0;
  int components = 4;
  // spike: Gaussian bumps of distinct features over a constant background
  std::vector<Point2> locations;
  double spike_width = 1.0;
  // stripes: sin/cos channel pairs, alternating x and y stripes
  double period = 12.0;
};

struct WarpSpec {
  WarpKind kind = WarpKind::none;
  double dx = 0.0;
  double dy = 0.0;
  double amplitude = 0.0;
  double wavelength = 32.0;
};

/// Grid units are volume cells: cell (x, y) sits at the integer point (x, y).
struct SynthSpec {
  std::uint32_t frames = 2;
  std::uint32_t height = 32;
  std::uint32_t width = 32;
  std::uint32_t dim = 16;
  PatternSpec pattern;
  WarpSpec warp;
  std::uint64_t seed = 0;

  static constexpr double kMaxWarp = 8.0;
  /// Throws ConfigError.
  void validate() const;
};

std::string to_string(PatternKind k);
std::string to_string(WarpKind k);

void to_json(nlohmann::json& j, const SynthSpec& s);
/// Throws SchemaError naming the offending field.
void from_json(const nlohmann::json& j, SynthSpec& s);

/// Forward map of one frame step; frame t shows the pattern pulled back
/// through t steps.
class WarpFunction {
 public:
  WarpFunction() = default;
  WarpFunction(WarpSpec spec, std::uint32_t width, std::uint32_t height);

  const WarpSpec& spec() const { return spec_; }
  /// W(p)
  Point2 apply(const Point2& p) const;
  /// W^-1(q), by Newton iteration for the sine warp.
  Point2 inverse(const Point2& q) const;
  /// W^steps(p) - p
  Point2 displacement(const Point2& p, int steps = 1) const;
  /// Largest |dW/dp - I| entry bound; < 1 keeps W invertible.
  double max_slope() const;

 private:
  WarpSpec spec_;
  double cx_ = 0.0;
  double cy_ = 0.0;
};

/// Ground-truth displacement of frame 0 -> frame `steps`, scaled by `scale`
/// (for fields whose canvas is `scale` times the synthetic grid).
class WarpDisplacement : public DisplacementSource {
 public:
  WarpDisplacement(WarpFunction warp, int steps, double scale = 1.0)
      : warp_(std::move(warp)), steps_(steps), scale_(scale) {}
  Point2 displacement(const Point2& p) const override;

 private:
  WarpFunction warp_;
  int steps_;
  double scale_;
};

/// Continuous pattern; sample() returns the unnormalized feature at (x, y).
class Pattern {
 public:
  Pattern(const PatternSpec& spec, std::uint32_t dim, std::uint64_t seed);
  std::vector<double> sample(double x, double y) const;
  /// Background vector of spike patterns (unit norm); empty otherwise.
  const std::vector<double>& background() const { return background_; }

 private:
  struct Wave {
    double kx, ky, phase, amp;
  };
  PatternSpec spec_;
  std::uint32_t dim_;
  std::vector<std::vector<Wave>> waves_;          // smooth_random, per channel
  std::vector<double> background_;                // constant and spike
  std::vector<std::vector<double>> spike_feats_;  // spike
};

struct SynthVolume {
  FeatureVolume volume;
  WarpFunction warp;
};

SynthVolume make_volume(const SynthSpec& spec);

/// Mean |disp(p) - truth(p)| over integer lattice points at least `margin`
/// pixels from every border, spaced `stride` pixels apart.
double oracle_endpoint_error(const DisplacementSource& disp, const DisplacementSource& truth, Canvas canvas,
                             int margin = 4, int stride = 1);

}  // namespace inrprop
