#include "fairgrpo/numerics/adamw.hpp"

#include <cmath>
#include <string>

#include "fairgrpo/errors.hpp"

namespace fairgrpo::num {

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = params_[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NumericalError("adamw: non-finite gradient in parameter " + std::to_string(i) +
                             " (shape " + shape_to_string(params_[i].shape()) + ") at index " +
                             std::to_string(j) + "; step skipped");
      }
    }
  }

  ++step_count_;
  const double lr = options_.learning_rate;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double t = static_cast<double>(step_count_);
  const double bias1 = 1.0 - std::pow(b1, t);
  const double bias2 = 1.0 - std::pow(b2, t);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_values();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      w[j] -= lr * options_.weight_decay * w[j];
      w[j] -= lr * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace fairgrpo::num
