#include "inrprop/adam.hpp"

#include <cmath>

#include "inrprop/error.hpp"

namespace inrprop {

AdamState AdamState::for_size(std::size_t n, double lr, double beta1, double beta2, double epsilon) {
  if (!(lr > 0.0)) throw ConfigError("Adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("Adam: epsilon must be > 0");
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractViolation("adam_step: parameter, gradient and moment sizes differ");
  for (double g : grads) {
    if (!std::isfinite(g)) throw DivergenceError("adam_step: non-finite gradient");
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

}  // namespace inrprop
