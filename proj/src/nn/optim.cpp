#include "qe/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qe::nn {

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& config) {
  for (auto* p : params) {
    if (!p->tensor.has_grad()) throw std::invalid_argument("adam_step: missing gradient for parameter " + p->name);
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto* p : params)
      for (auto g : p->tensor.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }
  for (auto* p : params) {
    ++p->step_count;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(p->step_count));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(p->step_count));
    auto values = p->tensor.mutable_values();
    auto grads = p->tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(grads[i]) * clip;
      const double m = config.beta1 * p->adam_m[i] + (1.0 - config.beta1) * g;
      const double v = config.beta2 * p->adam_v[i] + (1.0 - config.beta2) * g * g;
      p->adam_m[i] = static_cast<T>(m);
      p->adam_v[i] = static_cast<T>(v);
      const double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
      values[i] = static_cast<T>(values[i] - update);
    }
    p->tensor.zero_grad();
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->tensor.zero_grad();
}

template <typename T>
double grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& inputs, double h,
                  double floor) {
  for (auto t : inputs) t.zero_grad();
  {
    auto out = f();
    if (out.size() != 1) throw std::invalid_argument("grad_check: function output is not a scalar");
    out.backward();
  }
  double worst = 0.0;
  for (auto t : inputs) {
    std::vector<T> analytic(t.size(), T(0));
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = static_cast<T>(saved + h);
        plus = static_cast<double>(f().item());
        values[i] = static_cast<T>(saved - h);
        minus = static_cast<double>(f().item());
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    t.zero_grad();
  }
  return worst;
}

template void adam_step(const std::vector<Parameter<float>*>&, const AdamConfig&);
template void adam_step(const std::vector<Parameter<double>*>&, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;
template double grad_check(const std::function<Tensor<float>()>&, const std::vector<Tensor<float>>&, double,
                           double);
template double grad_check(const std::function<Tensor<double>()>&, const std::vector<Tensor<double>>&, double,
                           double);

}  // namespace qe::nn
