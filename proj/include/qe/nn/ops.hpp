#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qe/nn/tensor.hpp"

namespace qe::nn {

// All ops view tensors as rank-2 (rows x cols) unless stated otherwise.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a [m x k] times transpose(b) for b [n x k].
template <typename T> Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// Broadcasts a length-n vector over every row of a [m x n].
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// Adds a constant (non-differentiable) array of the same size.
template <typename T> Tensor<T> add_const(const Tensor<T>& a, const std::vector<T>& c);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

// Softmax along `axis` of an n-d tensor (negative axis counts from the end).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Rows of `table` selected by ids.
template <typename T> Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids);

template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Per-row negative log-likelihood of `targets` under softmax(logits).
// Rows with target < 0 contribute 0. Returns an [n x 1] tensor of
// weight[r] * -log p(target[r]); empty weights mean 1.
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets,
                             const std::vector<T>& weights = {});

// Layout of a padded batch: `batch` sequences of `query_len` queries each
// attending over `key_len` keys. Key j of sequence b is masked when
// j >= key_lengths[b]; with `causal`, query i also masks keys j > i.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::vector<std::size_t> key_lengths;
  bool causal = false;
};

// Scaled dot-product attention for all heads and batch entries.
// q [batch*query_len x d], k and v [batch*key_len x d].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttentionLayout& layout);

// GRU recurrence over precomputed input projections.
// input_proj [n x 3h] holds x_t W + b in (reset | update | candidate) order,
// recurrent [h x 3h] holds U in the same order. Starting from h_0 = 0:
//   r = sigmoid(a_r + h U_r), z = sigmoid(a_z + h U_z)
//   c = tanh(a_c + (r * h) U_c)
//   h' = (1 - z) * h + z * c
// With `reverse` the scan runs from the last row to the first; output row t
// is always the state after consuming input row t.
template <typename T>
Tensor<T> gru_scan(const Tensor<T>& input_proj, const Tensor<T>& recurrent, bool reverse);

enum class PoolMode { max, mean_topk };

// Per column: the k largest values over rows (all rows when fewer than k),
// reduced by max or by their mean. Output is [1 x cols].
template <typename T> Tensor<T> topk_pool(const Tensor<T>& x, std::size_t k, PoolMode mode);

// Mean of rows sharing a segment id. Every segment in [0, segments) needs
// at least one row.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, const std::vector<int>& segment_ids, std::size_t segments);

// Softmax of one float row evaluated in double; -inf entries give exactly 0.
std::vector<double> softmax_double(std::span<const float> row);

}  // namespace qe::nn
