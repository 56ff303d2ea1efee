#include "qe/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qe::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> view(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return CMapMat<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
MapMat<T> view(std::vector<T>& v, std::size_t r, std::size_t c) {
  return MapMat<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Parent grad buffer, or nullptr when that parent does not take gradients.
template <typename T>
std::vector<T>* grad_of(Node<T>& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? &p->grad : nullptr;
}

template <typename T>
const std::vector<T>& value_of(Node<T>& n, std::size_t i) {
  return n.parents[i]->value;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  view(out, m, n).noalias() = view(a.node()->value, m, k) * view(b.node()->value, k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto dc = view(self.grad, m, n);
    if (auto* ga = grad_of(self, 0)) view(*ga, m, k).noalias() += dc * view(value_of(self, 1), k, n).transpose();
    if (auto* gb = grad_of(self, 1)) view(*gb, k, n).noalias() += view(value_of(self, 0), m, k).transpose() * dc;
  });
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_bt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
  std::vector<T> out(m * n);
  view(out, m, n).noalias() = view(a.node()->value, m, k) * view(b.node()->value, n, k).transpose();
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto dc = view(self.grad, m, n);
    if (auto* ga = grad_of(self, 0)) view(*ga, m, k).noalias() += dc * view(value_of(self, 1), n, k);
    if (auto* gb = grad_of(self, 1)) view(*gb, n, k).noalias() += dc.transpose() * view(value_of(self, 0), m, k);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  const auto m = a.rows(), n = a.cols();
  require(row.size() == n, "add_row: row of size " + std::to_string(row.size()) + " for " + shape_str(a.shape()));
  std::vector<T> out(a.node()->value);
  const auto& rv = row.node()->value;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
  return make_result<T>(a.shape(), std::move(out), {a, row}, [m, n](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad[r * n + c];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.node()->value);
  for (auto& x : out) x *= factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, const std::vector<T>& c) {
  require(c.size() == a.size(), "add_const: size mismatch");
  std::vector<T> out(a.node()->value);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.node()->value);
  for (auto& x : out) x = x > T(0) ? x : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (self.value[i] > T(0)) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.node()->value);
  for (auto& x : out) x = std::tanh(x);
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
    }
  });
}

namespace {
template <typename T>
T logistic(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
}  // namespace

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.node()->value);
  for (auto& x : out) x = logistic(x);
  return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*g)[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  const auto& in = x.node()->value;
  std::vector<T> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(shape, std::move(out), {x}, [outer, inner, n](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += self.value[base + j * inner] * self.grad[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const auto idx = base + j * inner;
          (*g)[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const auto m = x.rows(), d = x.cols();
  require(d >= 1, "layer_norm: empty feature dimension");
  require(gain.size() == d && bias.size() == d, "layer_norm: gain/bias size mismatch");
  const auto& in = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<T> out(in.size()), xhat(in.size()), inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = &in[r * d];
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(d);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mu) * inv[r];
      xhat[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                        [m, d, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
                          const auto& gv = value_of(self, 1);
                          if (auto* gx = grad_of(self, 0)) {
                            for (std::size_t r = 0; r < m; ++r) {
                              T s1 = 0, s2 = 0;
                              for (std::size_t c = 0; c < d; ++c) {
                                const T dh = self.grad[r * d + c] * gv[c];
                                s1 += dh;
                                s2 += dh * xhat[r * d + c];
                              }
                              for (std::size_t c = 0; c < d; ++c) {
                                const T dh = self.grad[r * d + c] * gv[c];
                                (*gx)[r * d + c] += inv[r] / T(d) * (T(d) * dh - s1 - xhat[r * d + c] * s2);
                              }
                            }
                          }
                          if (auto* gg = grad_of(self, 1)) {
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < d; ++c) (*gg)[c] += self.grad[r * d + c] * xhat[r * d + c];
                          }
                          if (auto* gb = grad_of(self, 2)) {
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < d; ++c) (*gb)[c] += self.grad[r * d + c];
                          }
                        });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  const auto vocab = table.rows(), d = table.cols();
  const auto& tv = table.node()->value;
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
            "embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    std::copy_n(&tv[ids[i] * d], d, &out[i * d]);
  }
  return make_result<T>({ids.size(), d}, std::move(out), {table}, [ids, d](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) (*g)[ids[i] * d + c] += self.grad[i * d + c];
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->value;
    for (std::size_t r = 0; r < m; ++r) std::copy_n(&pv[r * widths[k]], widths[k], &out[r * total + offset]);
    offset += widths[k];
  }
  return make_result<T>({m, total}, std::move(out), parts, [m, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = grad_of(self, k)) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*g)[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const auto m = x.rows(), n = x.cols();
  require(begin + count <= n, "slice_cols: range outside " + shape_str(x.shape()));
  const auto& xv = x.node()->value;
  std::vector<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(&xv[r * n + begin], count, &out[r * count]);
  return make_result<T>({m, count}, std::move(out), {x}, [m, n, begin, count](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) (*g)[r * n + begin + c] += self.grad[r * count + c];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const auto n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::vector<T> out;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column count mismatch");
    sizes.push_back(p.size());
    out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
  }
  const auto m = out.size() / std::max<std::size_t>(n, 1);
  return make_result<T>({m, n}, std::move(out), parts, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const auto m = x.rows(), n = x.cols();
  const auto& xv = x.node()->value;
  std::vector<T> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m, "gather_rows: row index out of range");
    std::copy_n(&xv[rows[i] * n], n, &out[i * n]);
  }
  return make_result<T>({rows.size(), n}, std::move(out), {x}, [rows, n](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < n; ++c) (*g)[rows[i] * n + c] += self.grad[i * n + c];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.values()) total += v;
  return make_result<T>({1}, {total}, {x}, [](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<T>& weights) {
  const auto m = logits.rows(), v = logits.cols();
  require(targets.size() == m, "cross_entropy_rows: one target per row required");
  require(weights.empty() || weights.size() == m, "cross_entropy_rows: one weight per row required");
  const auto& lv = logits.node()->value;
  std::vector<T> out(m, T(0));
  std::vector<T> probs(m * v, T(0));
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0) continue;
    require(static_cast<std::size_t>(targets[r]) < v, "cross_entropy_rows: target out of range");
    const T* row = &lv[r * v];
    const T mx = *std::max_element(row, row + v);
    T total = 0;
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = std::exp(row[c] - mx);
      total += probs[r * v + c];
    }
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= total;
    const T w = weights.empty() ? T(1) : weights[r];
    out[r] = w * (std::log(total) + mx - row[targets[r]]);
  }
  return make_result<T>({m, 1}, std::move(out), {logits},
                        [m, v, targets, weights, probs = std::move(probs)](Node<T>& self) {
                          auto* g = grad_of(self, 0);
                          if (!g) return;
                          for (std::size_t r = 0; r < m; ++r) {
                            if (targets[r] < 0) continue;
                            const T scale = self.grad[r] * (weights.empty() ? T(1) : weights[r]);
                            for (std::size_t c = 0; c < v; ++c) (*g)[r * v + c] += scale * probs[r * v + c];
                            (*g)[r * v + targets[r]] -= scale;
                          }
                        });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionLayout& layout) {
  const auto B = layout.batch, Tq = layout.query_len, Tk = layout.key_len;
  const auto d = q.cols();
  require(heads >= 1 && d % heads == 0, "attention: model dim not divisible by head count");
  require(k.cols() == d && v.cols() == d, "attention: key/value width mismatch");
  require(q.rows() == B * Tq, "attention: query rows " + std::to_string(q.rows()) + " do not match layout " +
                                  std::to_string(B) + "x" + std::to_string(Tq));
  require(k.rows() == B * Tk && v.rows() == B * Tk, "attention: key rows " + std::to_string(k.rows()) +
                                                        " do not match layout " + std::to_string(B) + "x" +
                                                        std::to_string(Tk));
  require(layout.key_lengths.empty() || layout.key_lengths.size() == B,
          "attention: mask has " + std::to_string(layout.key_lengths.size()) + " lengths for batch of " +
              std::to_string(B));
  for (auto len : layout.key_lengths) require(len <= Tk, "attention: mask length exceeds key length");
  require(!layout.causal || Tq <= Tk, "attention: causal mask needs query_len <= key_len");

  const auto dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));
  const auto& qv = q.node()->value;
  const auto& kv = k.node()->value;
  const auto& vv = v.node()->value;
  std::vector<T> out(B * Tq * d, T(0));
  std::vector<T> probs(B * heads * Tq * Tk, T(0));
  std::vector<T> scores(Tk);

  for (std::size_t b = 0; b < B; ++b) {
    const auto valid = layout.key_lengths.empty() ? Tk : layout.key_lengths[b];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < Tq; ++i) {
        const T* qi = &qv[(b * Tq + i) * d + h * dh];
        const auto limit = layout.causal ? std::min(valid, i + 1) : valid;
        T* p = &probs[((b * heads + h) * Tq + i) * Tk];
        if (limit == 0) continue;  // fully masked row: zero weights
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const T* kj = &kv[(b * Tk + j) * d + h * dh];
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * scale_factor;
          mx = std::max(mx, scores[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = std::exp(scores[j] - mx);
          total += p[j];
        }
        T* oi = &out[(b * Tq + i) * d + h * dh];
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] /= total;
          const T* vj = &vv[(b * Tk + j) * d + h * dh];
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }

  return make_result<T>(
      {B * Tq, d}, std::move(out), {q, k, v},
      [B, Tq, Tk, d, dh, heads, scale_factor, probs = std::move(probs)](Node<T>& self) {
        const auto& qv = value_of(self, 0);
        const auto& kv = value_of(self, 1);
        const auto& vv = value_of(self, 2);
        auto* gq = grad_of(self, 0);
        auto* gk = grad_of(self, 1);
        auto* gv = grad_of(self, 2);
        std::vector<T> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < Tq; ++i) {
              const T* p = &probs[((b * heads + h) * Tq + i) * Tk];
              const T* doi = &self.grad[(b * Tq + i) * d + h * dh];
              T dot = 0;
              for (std::size_t j = 0; j < Tk; ++j) {
                if (p[j] == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const T* vj = &vv[(b * Tk + j) * d + h * dh];
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                dp[j] = s;
                dot += p[j] * s;
                if (gv) {
                  T* gvj = &(*gv)[(b * Tk + j) * d + h * dh];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * doi[c];
                }
              }
              const T* qi = &qv[(b * Tq + i) * d + h * dh];
              for (std::size_t j = 0; j < Tk; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - dot) * scale_factor;
                const T* kj = &kv[(b * Tk + j) * d + h * dh];
                if (gq) {
                  T* gqi = &(*gq)[(b * Tq + i) * d + h * dh];
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  T* gkj = &(*gk)[(b * Tk + j) * d + h * dh];
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gru_scan(const Tensor<T>& input_proj, const Tensor<T>& recurrent, bool reverse) {
  const auto n = input_proj.rows();
  const auto h = recurrent.rows();
  require(recurrent.cols() == 3 * h, "gru_scan: recurrent weights must be [h x 3h]");
  require(input_proj.cols() == 3 * h, "gru_scan: input projection must be [n x 3h]");
  const auto& a = input_proj.node()->value;
  const auto& u = recurrent.node()->value;
  const auto H3 = 3 * h;

  // Per step caches: previous state, r, z, candidate.
  std::vector<T> prev(n * h), rr(n * h), zz(n * h), cc(n * h), out(n * h);
  std::vector<T> state(h, T(0)), gated(h);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    const T* at = &a[t * H3];
    std::copy(state.begin(), state.end(), &prev[t * h]);
    for (std::size_t j = 0; j < h; ++j) {
      T sr = at[j], sz = at[h + j];
      for (std::size_t i = 0; i < h; ++i) {
        sr += state[i] * u[i * H3 + j];
        sz += state[i] * u[i * H3 + h + j];
      }
      rr[t * h + j] = logistic(sr);
      zz[t * h + j] = logistic(sz);
    }
    for (std::size_t i = 0; i < h; ++i) gated[i] = rr[t * h + i] * state[i];
    for (std::size_t j = 0; j < h; ++j) {
      T sc = at[2 * h + j];
      for (std::size_t i = 0; i < h; ++i) sc += gated[i] * u[i * H3 + 2 * h + j];
      cc[t * h + j] = std::tanh(sc);
    }
    for (std::size_t j = 0; j < h; ++j) {
      const T z = zz[t * h + j];
      state[j] = (T(1) - z) * state[j] + z * cc[t * h + j];
      out[t * h + j] = state[j];
    }
  }

  return make_result<T>(
      {n, h}, std::move(out), {input_proj, recurrent},
      [n, h, reverse, prev = std::move(prev), rr = std::move(rr), zz = std::move(zz),
       cc = std::move(cc)](Node<T>& self) {
        const auto H3 = 3 * h;
        const auto& u = value_of(self, 1);
        auto* ga = grad_of(self, 0);
        auto* gu = grad_of(self, 1);
        std::vector<T> dh(h, T(0)), dprev(h), da(H3), gated(h), dgated(h);
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t t = reverse ? s : n - 1 - s;  // reverse of the forward order
          for (std::size_t j = 0; j < h; ++j) dh[j] += self.grad[t * h + j];
          const T* hp = &prev[t * h];
          const T* r = &rr[t * h];
          const T* z = &zz[t * h];
          const T* c = &cc[t * h];
          for (std::size_t j = 0; j < h; ++j) {
            const T dz = dh[j] * (c[j] - hp[j]);
            const T dc = dh[j] * z[j];
            dprev[j] = dh[j] * (T(1) - z[j]);
            da[h + j] = dz * z[j] * (T(1) - z[j]);
            da[2 * h + j] = dc * (T(1) - c[j] * c[j]);
          }
          for (std::size_t i = 0; i < h; ++i) {
            gated[i] = r[i] * hp[i];
            T s2 = 0;
            for (std::size_t j = 0; j < h; ++j) s2 += da[2 * h + j] * u[i * H3 + 2 * h + j];
            dgated[i] = s2;
          }
          for (std::size_t i = 0; i < h; ++i) {
            const T dr = dgated[i] * hp[i];
            dprev[i] += dgated[i] * r[i];
            da[i] = dr * r[i] * (T(1) - r[i]);
          }
          for (std::size_t i = 0; i < h; ++i) {
            T s2 = 0;
            for (std::size_t j = 0; j < h; ++j) s2 += da[j] * u[i * H3 + j] + da[h + j] * u[i * H3 + h + j];
            dprev[i] += s2;
          }
          if (gu) {
            for (std::size_t i = 0; i < h; ++i) {
              T* row = &(*gu)[i * H3];
              for (std::size_t j = 0; j < h; ++j) {
                row[j] += hp[i] * da[j];
                row[h + j] += hp[i] * da[h + j];
                row[2 * h + j] += gated[i] * da[2 * h + j];
              }
            }
          }
          if (ga) {
            for (std::size_t j = 0; j < H3; ++j) (*ga)[t * H3 + j] += da[j];
          }
          dh = dprev;
        }
      });
}

template <typename T>
Tensor<T> topk_pool(const Tensor<T>& x, std::size_t k, PoolMode mode) {
  const auto n = x.rows(), f = x.cols();
  require(n > 0, "topk_pool: empty sequence");
  require(k >= 1, "topk_pool: k must be >= 1");
  const auto kk = std::min(k, n);
  const auto& xv = x.node()->value;
  std::vector<T> out(f);
  std::vector<std::size_t> picked(f * kk), order(n);
  for (std::size_t c = 0; c < f; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xv[a * f + c] > xv[b * f + c]; });
    T acc = 0;
    for (std::size_t i = 0; i < kk; ++i) {
      picked[c * kk + i] = order[i];
      acc += xv[order[i] * f + c];
    }
    out[c] = mode == PoolMode::max ? xv[order[0] * f + c] : acc / T(kk);
  }
  return make_result<T>({1, f}, std::move(out), {x}, [f, kk, mode, picked = std::move(picked)](Node<T>& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t c = 0; c < f; ++c) {
      if (mode == PoolMode::max) {
        (*g)[picked[c * kk] * f + c] += self.grad[c];
      } else {
        for (std::size_t i = 0; i < kk; ++i) (*g)[picked[c * kk + i] * f + c] += self.grad[c] / T(kk);
      }
    }
  });
}

template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, const std::vector<int>& segment_ids, std::size_t segments) {
  const auto n = x.rows(), f = x.cols();
  require(segment_ids.size() == n, "segment_mean: one segment id per row required");
  std::vector<std::size_t> counts(segments, 0);
  for (int id : segment_ids) {
    require(id >= 0 && static_cast<std::size_t>(id) < segments, "segment_mean: segment id out of range");
    ++counts[id];
  }
  for (std::size_t s = 0; s < segments; ++s) {
    require(counts[s] > 0, "segment_mean: segment " + std::to_string(s) + " has no rows");
  }
  const auto& xv = x.node()->value;
  std::vector<T> out(segments * f, T(0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) out[segment_ids[r] * f + c] += xv[r * f + c];
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t c = 0; c < f; ++c) out[s * f + c] /= T(counts[s]);
  return make_result<T>({segments, f}, std::move(out), {x}, [segment_ids, counts, f](Node<T>& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < segment_ids.size(); ++r) {
        const auto s = static_cast<std::size_t>(segment_ids[r]);
        for (std::size_t c = 0; c < f; ++c) (*g)[r * f + c] += self.grad[s * f + c] / T(counts[s]);
      }
    }
  });
}

#define QE_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul_bt(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_const(const Tensor<T>&, const std::vector<T>&);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> embedding(const Tensor<T>&, const std::vector<int>&);                                  \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                               \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, const std::vector<int>&, const std::vector<T>&); \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                               const AttentionLayout&);                                                    \
  template Tensor<T> gru_scan(const Tensor<T>&, const Tensor<T>&, bool);                                   \
  template Tensor<T> topk_pool(const Tensor<T>&, std::size_t, PoolMode);                                   \
  template Tensor<T> segment_mean(const Tensor<T>&, const std::vector<int>&, std::size_t);

QE_INSTANTIATE_OPS(float)
QE_INSTANTIATE_OPS(double)

std::vector<double> softmax_double(std::span<const float> row) {
  std::vector<double> out(row.size(), 0.0);
  if (row.empty()) return out;
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (std::size_t v = 0; v < row.size(); ++v) {
    out[v] = std::exp(static_cast<double>(row[v]) - mx);
    total += out[v];
  }
  for (auto& p : out) p /= total;
  return out;
}

}  // namespace qe::nn
