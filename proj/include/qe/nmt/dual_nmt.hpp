#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "qe/corpus/bpe.hpp"
#include "qe/corpus/synthetic.hpp"
#include "qe/nmt/unified_block.hpp"
#include "qe/nn/optim.hpp"

namespace qe::nmt {

using TokenIds = std::vector<int>;

struct NmtConfig {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 128;
  std::size_t experts = 3;
  std::size_t max_positions = 256;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const NmtConfig& c);
NmtConfig nmt_config_from_json(const nlohmann::json& j);

// primal: EncA encodes the source, EncB decodes the target.
// dual:   EncB encodes the target, EncA decodes the source.
enum class Direction { primal, dual };

struct TokenPair {
  TokenIds source;
  TokenIds target;
};

std::vector<TokenPair> tokenize_pairs(const corpus::Tokenizer& tokenizer, const std::vector<corpus::ParallelPair>& pairs);

// A right-padded batch. Every sequence ends with EOS (encoder side) or starts
// with an SOS token (decoder side).
struct PaddedBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
};

struct EncodedBatch {
  Tensor<float> states;  // [batch*len x d]
  PaddedBatch input;
};

struct DecodedBatch {
  Tensor<float> states;  // [batch*len x d], row i predicts target i
  Tensor<float> logits;  // [batch*len x |V|], non-predictable specials at -inf
  PaddedBatch input;     // SOS + target
  std::vector<int> targets;  // target + EOS per row, -1 on padding
};

struct MixtureResult {
  Tensor<float> loss;            // sum of per-sample winning NLLs
  std::vector<double> nll;       // per sample, equals the winner's expert NLL
  std::vector<std::size_t> winners;
};

struct GreedyResult {
  TokenIds tokens;
  bool truncated = false;
};

struct TeacherForced {
  std::size_t rows = 0;        // |y|
  std::vector<float> states;   // [rows x d]
  std::vector<double> probs;   // [rows x |V|]
};

// One-hot argmin with ties to the lowest index.
std::vector<int> responsibility(const std::vector<double>& nlls);

class DualNmt {
 public:
  DualNmt(const NmtConfig& config, std::size_t vocab_size);

  const NmtConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  const Tensor<float>& embedding() const { return embedding_; }
  const ConditionalEncoder<float>& encoder_a() const { return enc_a_; }
  const ConditionalEncoder<float>& encoder_b() const { return enc_b_; }
  bool predictable(int id) const { return output_mask_[static_cast<std::size_t>(id)] == 0.0f; }

  // Scaled embedding plus sinusoidal positions for a padded batch.
  Tensor<float> embed(const PaddedBatch& batch) const;

  // Sequences get EOS appended. Encoder encodes in encode mode.
  EncodedBatch encode(const ConditionalEncoder<float>& encoder, const std::vector<TokenIds>& seqs,
                      bool skip_zero_branch = false) const;
  // Teacher-forced decode of `targets` with SOS_{experts[b]} prepended.
  DecodedBatch decode(const ConditionalEncoder<float>& decoder, const EncodedBatch& context,
                      const std::vector<TokenIds>& targets, const std::vector<std::size_t>& experts) const;

  const ConditionalEncoder<float>& source_encoder(Direction d) const { return d == Direction::primal ? enc_a_ : enc_b_; }
  const ConditionalEncoder<float>& target_decoder(Direction d) const { return d == Direction::primal ? enc_b_ : enc_a_; }

  // Summed token NLL of target+EOS under expert z, per sample.
  std::vector<double> expert_nlls(Direction d, const std::vector<TokenIds>& sources,
                                  const std::vector<TokenIds>& targets, std::size_t expert) const;
  double expert_nll(Direction d, const TokenIds& source, const TokenIds& target, std::size_t expert) const;

  // Hard-EM loss: experts scored without gradient, then one graph through
  // each sample's winning expert.
  MixtureResult mixture_loss(Direction d, const std::vector<TokenIds>& sources,
                             const std::vector<TokenIds>& targets) const;

  std::vector<GreedyResult> greedy_decode(Direction d, const std::vector<TokenIds>& sources, std::size_t expert,
                                          std::size_t max_len) const;
  GreedyResult greedy_decode(Direction d, const TokenIds& source, std::size_t expert, std::size_t max_len) const;

  // Decoder states and double-precision softmax rows for the |y| target
  // positions (the EOS row is dropped).
  TeacherForced teacher_forced(Direction d, const TokenIds& source, const TokenIds& target, std::size_t expert) const;
  // The same for every expert in one batched pass, indexed by expert.
  std::vector<TeacherForced> teacher_forced_all(Direction d, const TokenIds& source, const TokenIds& target) const;

 private:
  PaddedBatch pad(const std::vector<TokenIds>& seqs, int prefix, int suffix) const;
  TeacherForced slice_teacher_forced(const DecodedBatch& dec, std::size_t b, std::size_t rows) const;

  NmtConfig config_;
  std::size_t vocab_size_;
  nn::ParameterSet<float> params_;
  Tensor<float> embedding_;
  ConditionalEncoder<float> enc_a_, enc_b_;
  std::vector<double> positions_;
  std::vector<float> output_mask_;  // 0 or -inf per vocabulary id
};

struct DualStepLosses {
  double primal = 0.0;  // mean per-sample NLL before the update
  double dual = 0.0;
};

// Primal mixture loss and update, then dual mixture loss and update.
// With `dual` false only the primal half runs.
DualStepLosses dual_train_step(DualNmt& model, const std::vector<TokenPair>& batch, nn::Adam<float>& optimizer,
                               bool dual = true);

struct NmtTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t warmup = 100;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool dual = true;
  std::uint64_t seed = 1;
  std::size_t log_every = 0;  // 0 disables the callback
};

struct NmtTrainLog {
  std::size_t step = 0;
  double primal = 0.0;
  double dual = 0.0;
};

// Shuffled epochs of fixed-size batches. `on_log` fires every log_every
// steps with the averaged losses since the previous call.
std::vector<NmtTrainLog> train_nmt(DualNmt& model, const std::vector<TokenPair>& pairs, const NmtTrainConfig& config,
                                   const std::function<void(const NmtTrainLog&)>& on_log = {});

// Fraction of target tokens whose teacher-forced argmax is correct, using
// each sample's best-scoring expert.
double teacher_forced_accuracy(const DualNmt& model, Direction d, const std::vector<TokenPair>& pairs,
                               std::size_t batch_size = 64);

void save_nmt(const std::filesystem::path& dir, const DualNmt& model, std::uint64_t vocab_hash);
DualNmt load_nmt(const std::filesystem::path& dir, std::uint64_t expected_vocab_hash);

}  // namespace qe::nmt
