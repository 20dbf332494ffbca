#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace inrprop {

/// T x H' x W' x D grid of unit-norm feature vectors, row-major (t, y, x, d).
struct FeatureVolume {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;
  /// Free text, e.g. "dinov3-vits16 S=448 p=16".
  std::string source_tag;

  FeatureVolume() = default;
  FeatureVolume(std::uint32_t t, std::uint32_t h, std::uint32_t w, std::uint32_t d)
      : frames(t), height(h), width(w), dim(d), data(static_cast<std::size_t>(t) * h * w * d, 0.0f) {}

  std::size_t cell_count() const { return static_cast<std::size_t>(frames) * height * width; }
  std::size_t offset(std::uint32_t t, std::uint32_t y, std::uint32_t x) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * dim;
  }
  std::span<const float> at(std::uint32_t t, std::uint32_t y, std::uint32_t x) const {
    return {data.data() + offset(t, y, x), dim};
  }
  std::span<float> at(std::uint32_t t, std::uint32_t y, std::uint32_t x) {
    return {data.data() + offset(t, y, x), dim};
  }

  friend bool operator==(const FeatureVolume&, const FeatureVolume&) = default;
};

struct NormReport {
  std::size_t renormalized = 0;  ///< vectors off by more than the tolerance
  double max_deviation = 0.0;    ///< max | ||f|| - 1 |
};

/// Checks shapes, finiteness and unit norms (within `tolerance`). Throws
/// ContractViolation on bad shapes or non-finite values.
NormReport check_norms(const FeatureVolume& volume, double tolerance = 1e-3);

/// L2-normalizes every vector whose norm deviates from 1 by more than
/// `tolerance`. Zero vectors are rejected with ContractViolation.
NormReport normalize_features(FeatureVolume& volume, double tolerance = 1e-3);

}  // namespace inrprop
