#include "qe/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace qe::nn {

template <typename T>
Tensor<T> ParameterSet<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  if (find_index(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->tensor = Tensor<T>(std::move(shape), std::move(values), true);
  p->adam_m.assign(p->tensor.size(), T(0));
  p->adam_v.assign(p->tensor.size(), T(0));
  params_.push_back(std::move(p));
  return params_.back()->tensor;
}

template <typename T>
Tensor<T> ParameterSet<T>::zeros(const std::string& name, Shape shape) {
  const auto n = shape_size(shape);
  return add(name, std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> ParameterSet<T>::ones(const std::string& name, Shape shape) {
  const auto n = shape_size(shape);
  return add(name, std::move(shape), std::vector<T>(n, T(1)));
}

template <typename T>
Tensor<T> ParameterSet<T>::xavier(const std::string& name, Shape shape, Rng& rng) {
  const auto n = shape_size(shape);
  const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2]) : 1.0;
  const double fan_out = static_cast<double>(shape.back());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> values(n);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> ParameterSet<T>::normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  const auto n = shape_size(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(n);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
long ParameterSet<T>::find_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->name == name) return static_cast<long>(i);
  }
  return -1;
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) {
  const auto i = find_index(name);
  return i < 0 ? nullptr : params_[i].get();
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
  auto* p = find(name);
  if (!p) throw std::out_of_range("unknown parameter: " + name);
  return *p;
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
  const auto i = find_index(name);
  if (i < 0) throw std::out_of_range("unknown parameter: " + name);
  return *params_[i];
}

template <typename T>
std::vector<Parameter<T>*> ParameterSet<T>::select(const std::vector<std::string>& prefixes) {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) {
    bool keep = prefixes.empty();
    for (const auto& prefix : prefixes) keep = keep || p->name.rfind(prefix, 0) == 0;
    if (keep) out.push_back(p.get());
  }
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p->tensor.zero_grad();
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->tensor.size();
  return n;
}

template <typename T>
std::vector<std::vector<T>> ParameterSet<T>::snapshot() const {
  std::vector<std::vector<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p->tensor.values().begin(), p->tensor.values().end());
  return out;
}

template <typename T>
void ParameterSet<T>::restore(const std::vector<std::vector<T>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i]->tensor.mutable_values();
    if (values[i].size() != dst.size()) throw std::invalid_argument("restore: size mismatch for " + params_[i]->name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

template <typename T>
AttentionWeights<T> AttentionWeights<T>::create(ParameterSet<T>& params, const std::string& prefix,
                                                 std::size_t model_dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw std::invalid_argument("attention: model_dim " + std::to_string(model_dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  AttentionWeights w;
  w.query = params.xavier(prefix + ".query", {model_dim, model_dim}, rng);
  w.key = params.xavier(prefix + ".key", {model_dim, model_dim}, rng);
  w.value = params.xavier(prefix + ".value", {model_dim, model_dim}, rng);
  w.output = params.xavier(prefix + ".output", {model_dim, model_dim}, rng);
  w.heads = heads;
  w.model_dim = model_dim;
  return w;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const AttentionWeights<T>& w, const AttentionLayout& layout) {
  for (const auto* x : {&q_in, &k_in, &v_in}) {
    if (x->cols() != w.model_dim) {
      throw std::invalid_argument("multi_head_attention: input width " + std::to_string(x->cols()) +
                                  " != model_dim " + std::to_string(w.model_dim));
    }
  }
  auto q = matmul(q_in, w.query);
  auto k = matmul(k_in, w.key);
  auto v = matmul(v_in, w.value);
  return matmul(attention(q, k, v, w.heads, layout), w.output);
}

template <typename T>
LayerNormWeights<T> LayerNormWeights<T>::create(ParameterSet<T>& params, const std::string& prefix,
                                                std::size_t dim) {
  return {params.ones(prefix + ".gain", {dim}), params.zeros(prefix + ".bias", {dim})};
}

template <typename T>
Linear<T> Linear<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t in, std::size_t out,
                            Rng& rng) {
  return {params.xavier(prefix + ".weight", {in, out}, rng), params.zeros(prefix + ".bias", {out})};
}

template <typename T>
FeedForward<T> FeedForward<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                                      std::size_t hidden, Rng& rng) {
  auto inner = Linear<T>::create(params, prefix + ".inner", dim, hidden, rng);
  auto outer = Linear<T>::create(params, prefix + ".outer", hidden, dim, rng);
  return {inner, outer};
}

template <typename T>
GruWeights<T> GruWeights<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t in,
                                    std::size_t hidden, Rng& rng) {
  GruWeights w;
  w.input = params.xavier(prefix + ".input", {in, 3 * hidden}, rng);
  w.recurrent = params.xavier(prefix + ".recurrent", {hidden, 3 * hidden}, rng);
  w.bias = params.zeros(prefix + ".bias", {3 * hidden});
  return w;
}

template <typename T>
BiGru<T> BiGru<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                          Rng& rng) {
  auto fwd = GruWeights<T>::create(params, prefix + ".fwd", in, hidden, rng);
  auto bwd = GruWeights<T>::create(params, prefix + ".bwd", in, hidden, rng);
  return {fwd, bwd};
}

template <typename T>
Tensor<T> gru_bidirectional(const Tensor<T>& seq, const BiGru<T>& w) {
  if (seq.rows() == 0) throw std::invalid_argument("gru_bidirectional: empty sequence");
  auto fwd = gru_scan(add_row(matmul(seq, w.forward.input), w.forward.bias), w.forward.recurrent, false);
  auto bwd = gru_scan(add_row(matmul(seq, w.backward.input), w.backward.bias), w.backward.recurrent, true);
  return concat_cols<T>({fwd, bwd});
}

std::vector<double> sinusoidal_positions(std::size_t positions, std::size_t dim) {
  std::vector<double> table(positions * dim);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      table[p * dim + i] = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return table;
}

#define QE_INSTANTIATE_LAYERS(T)                                                                          \
  template class ParameterSet<T>;                                                                          \
  template struct AttentionWeights<T>;                                                                     \
  template struct LayerNormWeights<T>;                                                                     \
  template struct Linear<T>;                                                                               \
  template struct FeedForward<T>;                                                                          \
  template struct GruWeights<T>;                                                                           \
  template struct BiGru<T>;                                                                                \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                          const AttentionWeights<T>&, const AttentionLayout&);             \
  template Tensor<T> gru_bidirectional(const Tensor<T>&, const BiGru<T>&);

QE_INSTANTIATE_LAYERS(float)
QE_INSTANTIATE_LAYERS(double)

}  // namespace qe::nn
