#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "qe/nn/layers.hpp"

namespace qe::nmt {

using nn::AttentionLayout;
using nn::Tensor;

inline constexpr double kLayerNormEps = 1e-5;

// One block usable as an encoder layer or a decoder layer:
//   e1 = LN1(e + SelfAttn(e))
//   e2 = LN2(e1 + Cross)        Cross = MHA(q=e1, k=ctx, v=ctx) when decoding,
//                               MHA(q=0, k=e1, v=0) == 0 when encoding
//   e3 = LN3(e2 + FFN(e2))
template <typename T>
struct UnifiedBlock {
  nn::AttentionWeights<T> self_attention;
  nn::AttentionWeights<T> cross_attention;
  nn::FeedForward<T> feed_forward;
  nn::LayerNormWeights<T> norm1, norm2, norm3;

  static UnifiedBlock create(nn::ParameterSet<T>& params, const std::string& prefix, std::size_t model_dim,
                             std::size_t heads, std::size_t ff_dim, nn::Rng& rng);
};

// Cross-attention source for decode mode. `layout` describes the query batch
// (decoder side) against the context keys.
template <typename T>
struct CrossContext {
  Tensor<T> states;
  AttentionLayout layout;
};

enum class BlockMode { encode, decode };

// In encode mode the cross branch is evaluated as zero-query, zero-value
// attention unless `skip_zero_branch`, which drops it; both give the same bits.
template <typename T>
Tensor<T> unified_block_forward(const UnifiedBlock<T>& block, const Tensor<T>& e, const AttentionLayout& self_layout,
                                BlockMode mode, std::type_identity_t<const CrossContext<T>*> context,
                                bool skip_zero_branch = false);

template <typename T>
struct ConditionalEncoder {
  std::vector<UnifiedBlock<T>> blocks;

  static ConditionalEncoder create(nn::ParameterSet<T>& params, const std::string& prefix, std::size_t layers,
                                   std::size_t model_dim, std::size_t heads, std::size_t ff_dim, nn::Rng& rng);

  Tensor<T> forward(const Tensor<T>& e, const AttentionLayout& self_layout, BlockMode mode,
                    const CrossContext<T>* context, bool skip_zero_branch = false) const;
};

}  // namespace qe::nmt
