#pragma once

#include <cmath>
#include <vector>

#include "keynet/tensor.hpp"

namespace keynet {

// Bias-corrected Adam. Accumulators are laid out one per parameter tensor
// and must stay aligned with the parameter list across calls.
struct AdamState {
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState init(const std::vector<Tensor>& params, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

// One update over all parameters, reading gradients from each tensor's grad
// buffer. Parameters without an allocated grad are treated as zero-gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state,
                      double lr) {
  if (params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: state holds " +
                                std::to_string(state.m.size()) +
                                " accumulators for " +
                                std::to_string(params.size()) + " parameters");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    if (state.m[p].size() != t.numel()) {
      throw std::invalid_argument("adam_step: accumulator " +
                                  std::to_string(p) + " has " +
                                  std::to_string(state.m[p].size()) +
                                  " entries for parameter of " +
                                  std::to_string(t.numel()));
    }
    if (!t.grad) continue;
    double* theta = t.data->data();
    const double* g = t.grad->data();
    double* m = state.m[p].data();
    double* v = state.v[p].data();
    const std::size_t n = t.numel();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace keynet
