#pragma once

// Central finite-difference oracle, independent of the reverse-mode sweep it
// is used to check: it only ever evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fairgrpo/numerics/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
  double worst_relative_error = 0.0;  // max over tensors of ||a-n|| / max(||a||,||n||)
  std::size_t worst_tensor = 0;
};

// `loss` must rebuild the graph from `params` on every call.
inline GradCheckResult grad_check(const std::function<fairgrpo::num::Tensor()>& loss,
                                  std::vector<fairgrpo::num::Tensor> params, double h = 1e-5,
                                  std::size_t max_elements_per_tensor = 400) {
  using fairgrpo::num::Tensor;
  for (auto& p : params) p.zero_grad();
  fairgrpo::num::backward(loss());
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_elements_per_tensor);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      double plus, minus;
      {
        fairgrpo::num::NoGradGuard guard;
        values[i] = saved + h;
        plus = loss().item();
        values[i] = saved - h;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > result.worst_relative_error) {
      result.worst_relative_error = rel;
      result.worst_tensor = t;
    }
  }
  return result;
}

}  // namespace testsupport
