#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "qe/nmt/dual_nmt.hpp"

namespace qe::xlm {

using nmt::TokenIds;
using nmt::TokenPair;
using nn::Tensor;

struct XlmConfig {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 128;
  std::size_t max_positions = 256;
  std::uint64_t seed = 2;
};

nlohmann::json to_json(const XlmConfig& c);
XlmConfig xlm_config_from_json(const nlohmann::json& j);

struct MaskConfig {
  double select_rate = 0.15;
  // Of the selected tokens: mask_share become MASK, random_share a random
  // regular token, the rest stay unchanged.
  double mask_share = 0.8;
  double random_share = 0.1;
};

// One input row for the masked language model. labels[i] is the original
// token at prediction positions and -1 elsewhere.
struct MaskedSequence {
  std::vector<int> input;
  std::vector<int> labels;
  std::vector<int> language;   // 0 source, 1 target
  std::vector<int> positions;  // restart at 0 per segment
  std::size_t prediction_count() const;
  std::vector<std::size_t> prediction_positions() const;
};

// Regular token ids are [first_regular, vocab_size).
struct TokenRange {
  int first_regular = 0;
  int vocab_size = 0;
};

// Monolingual layout [seq, EOS]. EOS is never selected.
MaskedSequence mlm_mask(const TokenIds& seq, int language, const MaskConfig& config, TokenRange range,
                        std::uint64_t seed);

// Layout [src, EOS, tgt, EOS]; masking over both spans, EOS excluded.
MaskedSequence tlm_batch(const TokenPair& pair, const MaskConfig& config, TokenRange range, std::uint64_t seed);

class Xlm {
 public:
  Xlm(const XlmConfig& config, std::size_t vocab_size, std::size_t expert_count);

  const XlmConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t expert_count() const { return expert_count_; }
  TokenRange token_range() const;
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  const Tensor<float>& embedding() const { return embedding_; }

  struct Output {
    Tensor<float> states;  // [batch*len x d]
    Tensor<float> logits;  // [batch*len x |V|]
    std::size_t len = 0;
  };
  Output forward(const std::vector<MaskedSequence>& batch) const;

  // Mean cross-entropy over prediction positions.
  Tensor<float> loss(const std::vector<MaskedSequence>& batch) const;

 private:
  XlmConfig config_;
  std::size_t vocab_size_;
  std::size_t expert_count_;
  nn::ParameterSet<float> params_;
  Tensor<float> embedding_, language_, head_bias_;
  nmt::ConditionalEncoder<float> blocks_;
  std::vector<double> positions_;
  std::vector<float> output_mask_;
};

// One optimizer step on the batch; nullopt (and no step) when the batch has
// no prediction positions.
std::optional<double> pretrain_step(Xlm& model, const std::vector<MaskedSequence>& batch,
                                    nn::Adam<float>& optimizer);

struct XlmTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t warmup = 100;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double tlm_mix = 0.5;  // probability that a step uses TLM rows
  MaskConfig mask;
  std::uint64_t seed = 3;
  std::size_t log_every = 0;
};

struct XlmTrainLog {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t skipped = 0;
};

// MLM steps draw each row from a random side of a random pair.
std::vector<XlmTrainLog> pretrain(Xlm& model, const std::vector<TokenPair>& pairs, const XlmTrainConfig& config,
                                  const std::function<void(const XlmTrainLog&)>& on_log = {});

// Argmax accuracy over prediction positions of seeded TLM rows.
double masked_accuracy(const Xlm& model, const std::vector<TokenPair>& pairs, const MaskConfig& mask,
                       std::uint64_t seed);

struct TargetView {
  std::size_t rows = 0;        // |tgt|
  std::vector<float> states;   // [rows x d], unmasked pass
  std::vector<double> probs;   // [rows x |V|], row i with target i masked alone
};

TargetView target_states_and_distributions(const Xlm& model, const TokenPair& pair);

void save_xlm(const std::filesystem::path& dir, const Xlm& model, std::uint64_t vocab_hash);
Xlm load_xlm(const std::filesystem::path& dir, std::uint64_t expected_vocab_hash);

}  // namespace qe::xlm
