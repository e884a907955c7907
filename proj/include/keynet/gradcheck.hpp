#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "keynet/tensor.hpp"

namespace keynet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Compares analytic gradients against central finite differences. `loss_fn`
// must rebuild the forward graph from the current parameter values on every
// call; only forward evaluation is used on the perturbed points.
inline GradCheckReport check_gradients(
    std::vector<Tensor>& params, const std::vector<std::string>& names,
    const std::function<Tensor()>& loss_fn, double h = 1e-5) {
  for (Tensor& p : params) {
    p.ensure_grad();
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.push_back(*p.grad);

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<double>& theta = *params[p].data;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double lp = loss_fn().scalar();
      theta[i] = saved - h;
      const double lm = loss_fn().scalar();
      theta[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
      const double rel = std::abs(a - fd) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p < names.size() ? names[p] : std::to_string(p);
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace keynet
