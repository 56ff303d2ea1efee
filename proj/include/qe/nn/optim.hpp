#pragma once

#include <functional>
#include <vector>

#include "qe/nn/layers.hpp"

namespace qe::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global grad-norm clip; 0 disables
};

// One bias-corrected Adam update per parameter, then grads are cleared.
// Throws std::invalid_argument naming the first parameter without a grad.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& config);

template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {}

  void step() { adam_step(params_, config_); }
  void zero_grad();
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig config_;
};

// Central-difference check of every coordinate of `inputs` against the
// reverse-mode gradient of the scalar returned by `f`. Returns the maximum of
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
template <typename T>
double grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& inputs, double h = 1e-5,
                  double floor = 1e-3);

}  // namespace qe::nn
