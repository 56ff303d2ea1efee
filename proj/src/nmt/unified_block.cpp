#include "qe/nmt/unified_block.hpp"

#include <stdexcept>

namespace qe::nmt {

template <typename T>
UnifiedBlock<T> UnifiedBlock<T>::create(nn::ParameterSet<T>& params, const std::string& prefix,
                                        std::size_t model_dim, std::size_t heads, std::size_t ff_dim, nn::Rng& rng) {
  UnifiedBlock b;
  b.self_attention = nn::AttentionWeights<T>::create(params, prefix + ".self", model_dim, heads, rng);
  b.cross_attention = nn::AttentionWeights<T>::create(params, prefix + ".cross", model_dim, heads, rng);
  b.feed_forward = nn::FeedForward<T>::create(params, prefix + ".ffn", model_dim, ff_dim, rng);
  b.norm1 = nn::LayerNormWeights<T>::create(params, prefix + ".norm1", model_dim);
  b.norm2 = nn::LayerNormWeights<T>::create(params, prefix + ".norm2", model_dim);
  b.norm3 = nn::LayerNormWeights<T>::create(params, prefix + ".norm3", model_dim);
  return b;
}

template <typename T>
Tensor<T> unified_block_forward(const UnifiedBlock<T>& block, const Tensor<T>& e, const AttentionLayout& self_layout,
                                BlockMode mode, std::type_identity_t<const CrossContext<T>*> context,
                                bool skip_zero_branch) {
  const T eps = static_cast<T>(kLayerNormEps);
  auto e1 = block.norm1(nn::add(e, nn::multi_head_attention(e, e, e, block.self_attention, self_layout)), eps);
  Tensor<T> e2;
  if (mode == BlockMode::decode) {
    if (context == nullptr || !context->states.defined()) {
      throw std::invalid_argument("unified block: decode mode needs a context");
    }
    auto cross = nn::multi_head_attention(e1, context->states, context->states, block.cross_attention,
                                          context->layout);
    e2 = block.norm2(nn::add(e1, cross), eps);
  } else if (skip_zero_branch) {
    e2 = block.norm2(e1, eps);
  } else {
    AttentionLayout layout = self_layout;
    layout.causal = false;
    auto zero = Tensor<T>::zeros(e1.shape());
    auto cross = nn::multi_head_attention(zero, e1, zero, block.cross_attention, layout);
    e2 = block.norm2(nn::add(e1, cross), eps);
  }
  return block.norm3(nn::add(e2, block.feed_forward(e2)), eps);
}

template <typename T>
ConditionalEncoder<T> ConditionalEncoder<T>::create(nn::ParameterSet<T>& params, const std::string& prefix,
                                                    std::size_t layers, std::size_t model_dim, std::size_t heads,
                                                    std::size_t ff_dim, nn::Rng& rng) {
  ConditionalEncoder enc;
  for (std::size_t i = 0; i < layers; ++i) {
    enc.blocks.push_back(
        UnifiedBlock<T>::create(params, prefix + ".block" + std::to_string(i), model_dim, heads, ff_dim, rng));
  }
  return enc;
}

template <typename T>
Tensor<T> ConditionalEncoder<T>::forward(const Tensor<T>& e, const AttentionLayout& self_layout, BlockMode mode,
                                         const CrossContext<T>* context, bool skip_zero_branch) const {
  Tensor<T> h = e;
  for (const auto& b : blocks) h = unified_block_forward(b, h, self_layout, mode, context, skip_zero_branch);
  return h;
}

template struct UnifiedBlock<float>;
template struct UnifiedBlock<double>;
template struct ConditionalEncoder<float>;
template struct ConditionalEncoder<double>;
template Tensor<float> unified_block_forward(const UnifiedBlock<float>&, const Tensor<float>&,
                                             const AttentionLayout&, BlockMode, const CrossContext<float>*, bool);
template Tensor<double> unified_block_forward(const UnifiedBlock<double>&, const Tensor<double>&,
                                              const AttentionLayout&, BlockMode, const CrossContext<double>*, bool);

}  // namespace qe::nmt
