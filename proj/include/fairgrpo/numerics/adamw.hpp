#pragma once

#include <cstdint>
#include <vector>

#include "fairgrpo/numerics/tensor.hpp"

namespace fairgrpo::num {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Moment buffers mirror the parameter
// shapes; step_count advances by one per successful step().
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);

  // Applies one update from the accumulated gradients. Parameters without a
  // gradient are treated as having a zero gradient. Throws NumericalError,
  // leaving every parameter and moment untouched, if any gradient is not
  // finite.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_count_; }
  const AdamWOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace fairgrpo::num
