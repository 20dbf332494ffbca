#include "inrprop/volume.hpp"

#include <cmath>

#include "inrprop/error.hpp"

namespace inrprop {

namespace {

void check_shape(const FeatureVolume& v) {
  if (v.frames == 0 || v.height == 0 || v.width == 0 || v.dim == 0)
    throw ContractViolation("feature volume has a zero dimension");
  if (v.data.size() != v.cell_count() * v.dim)
    throw ContractViolation("feature volume data size does not match its dimensions");
}

double norm_of(std::span<const float> f) {
  double s = 0.0;
  for (float x : f) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

NormReport check_norms(const FeatureVolume& volume, double tolerance) {
  check_shape(volume);
  NormReport report;
  for (std::size_t c = 0; c < volume.cell_count(); ++c) {
    std::span<const float> f(volume.data.data() + c * volume.dim, volume.dim);
    for (float x : f) {
      if (!std::isfinite(x)) throw ContractViolation("feature volume contains a non-finite value");
    }
    const double dev = std::abs(norm_of(f) - 1.0);
    report.max_deviation = std::max(report.max_deviation, dev);
    if (dev > tolerance) ++report.renormalized;
  }
  return report;
}

NormReport normalize_features(FeatureVolume& volume, double tolerance) {
  NormReport report = check_norms(volume, tolerance);
  if (report.renormalized == 0) return report;
  for (std::size_t c = 0; c < volume.cell_count(); ++c) {
    std::span<float> f(volume.data.data() + c * volume.dim, volume.dim);
    const double n = norm_of(f);
    if (std::abs(n - 1.0) <= tolerance) continue;
    if (n == 0.0) throw ContractViolation("feature volume contains a zero vector");
    for (float& x : f) x = static_cast<float>(x / n);
  }
  return report;
}

}  // namespace inrprop
