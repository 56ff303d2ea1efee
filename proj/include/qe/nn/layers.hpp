#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "qe/nn/ops.hpp"
#include "qe/nn/tensor.hpp"

namespace qe::nn {

using Rng = std::mt19937_64;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  std::uint64_t step_count = 0;
};

// Owns a model's parameters in registration order. Addresses are stable.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values);
  Tensor<T> zeros(const std::string& name, Shape shape);
  Tensor<T> ones(const std::string& name, Shape shape);
  Tensor<T> xavier(const std::string& name, Shape shape, Rng& rng);
  Tensor<T> normal(const std::string& name, Shape shape, double stddev, Rng& rng);

  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  Parameter<T>* find(const std::string& name);
  bool contains(const std::string& name) const { return find_index(name) >= 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  // Pointers to every parameter whose name starts with one of the prefixes
  // (all parameters when `prefixes` is empty).
  std::vector<Parameter<T>*> select(const std::vector<std::string>& prefixes = {});

  void zero_grad();
  std::size_t element_count() const;

  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& values);

 private:
  long find_index(const std::string& name) const;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

// Bias-free projections for multi-head attention.
template <typename T>
struct AttentionWeights {
  Tensor<T> query, key, value, output;
  std::size_t heads = 1;
  std::size_t model_dim = 0;

  static AttentionWeights create(ParameterSet<T>& params, const std::string& prefix, std::size_t model_dim,
                                 std::size_t heads, Rng& rng);
};

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const AttentionWeights<T>& w, const AttentionLayout& layout);

template <typename T>
struct LayerNormWeights {
  Tensor<T> gain, bias;
  static LayerNormWeights create(ParameterSet<T>& params, const std::string& prefix, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x, T eps) const { return layer_norm(x, gain, bias, eps); }
};

template <typename T>
struct Linear {
  Tensor<T> weight, bias;
  static Linear create(ParameterSet<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
                       Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

// Two affine maps with a ReLU between them.
template <typename T>
struct FeedForward {
  Linear<T> inner, outer;
  static FeedForward create(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                            std::size_t hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return outer(relu(inner(x))); }
};

template <typename T>
struct GruWeights {
  Tensor<T> input, recurrent, bias;  // [f x 3h], [h x 3h], [3h]
  static GruWeights create(ParameterSet<T>& params, const std::string& prefix, std::size_t in,
                           std::size_t hidden, Rng& rng);
  std::size_t hidden() const { return recurrent.rows(); }
};

template <typename T>
struct BiGru {
  GruWeights<T> forward, backward;
  static BiGru create(ParameterSet<T>& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                      Rng& rng);
  std::size_t output_dim() const { return 2 * forward.hidden(); }
};

// Runs both directions over seq [n x f] and concatenates to [n x 2h].
template <typename T>
Tensor<T> gru_bidirectional(const Tensor<T>& seq, const BiGru<T>& weights);

// Sinusoidal position table, rows [0, positions).
std::vector<double> sinusoidal_positions(std::size_t positions, std::size_t dim);

}  // namespace qe::nn
