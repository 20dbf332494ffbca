#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace inrprop {

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;

  /// Zero moments for `n` parameters. Throws ConfigError on bad hyperparameters.
  static AdamState for_size(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                            double epsilon = 1e-8);
};

/// One bias-corrected Adam update in place. Throws DivergenceError (and leaves
/// params and state untouched) if any gradient is non-finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace inrprop
