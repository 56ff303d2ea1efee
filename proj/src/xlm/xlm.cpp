#include "qe/xlm/xlm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "qe/nn/checkpoint.hpp"

namespace qe::xlm {

using corpus::Vocabulary;

nlohmann::json to_json(const XlmConfig& c) {
  return {{"model_dim", c.model_dim}, {"heads", c.heads}, {"layers", c.layers}, {"ff_dim", c.ff_dim},
          {"max_positions", c.max_positions}, {"seed", c.seed}};
}

XlmConfig xlm_config_from_json(const nlohmann::json& j) {
  XlmConfig c;
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::size_t MaskedSequence::prediction_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
}

std::vector<std::size_t> MaskedSequence::prediction_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out.push_back(i);
  return out;
}

namespace {

void validate(const MaskConfig& c) {
  if (c.select_rate < 0.0 || c.select_rate > 1.0) throw std::invalid_argument("mask: select_rate outside [0,1]");
  if (c.mask_share < 0.0 || c.random_share < 0.0 || c.mask_share + c.random_share > 1.0) {
    throw std::invalid_argument("mask: replacement shares must be non-negative and sum to at most 1");
  }
}

// Selects and replaces tokens in place; `eligible[i]` false keeps position i.
void apply_mask(MaskedSequence& s, const std::vector<bool>& eligible, const MaskConfig& config, TokenRange range,
                std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> random_token(range.first_regular, std::max(range.first_regular, range.vocab_size - 1));
  s.labels.assign(s.input.size(), -1);
  for (std::size_t i = 0; i < s.input.size(); ++i) {
    if (!eligible[i] || !(unit(rng) < config.select_rate)) continue;
    s.labels[i] = s.input[i];
    const double u = unit(rng);
    if (u < config.mask_share) s.input[i] = Vocabulary::kMask;
    else if (u < config.mask_share + config.random_share) s.input[i] = random_token(rng);
  }
}

}  // namespace

MaskedSequence mlm_mask(const TokenIds& seq, int language, const MaskConfig& config, TokenRange range,
                        std::uint64_t seed) {
  MaskedSequence s;
  s.input = seq;
  s.input.push_back(Vocabulary::kEos);
  s.language.assign(s.input.size(), language);
  s.positions.resize(s.input.size());
  std::iota(s.positions.begin(), s.positions.end(), 0);
  std::vector<bool> eligible(s.input.size(), true);
  eligible.back() = false;
  apply_mask(s, eligible, config, range, seed);
  return s;
}

MaskedSequence tlm_batch(const TokenPair& pair, const MaskConfig& config, TokenRange range, std::uint64_t seed) {
  MaskedSequence s;
  const std::size_t ns = pair.source.size() + 1, nt = pair.target.size() + 1;
  s.input = pair.source;
  s.input.push_back(Vocabulary::kEos);
  s.input.insert(s.input.end(), pair.target.begin(), pair.target.end());
  s.input.push_back(Vocabulary::kEos);
  s.language.assign(ns, 0);
  s.language.resize(ns + nt, 1);
  for (std::size_t i = 0; i < ns; ++i) s.positions.push_back(static_cast<int>(i));
  for (std::size_t i = 0; i < nt; ++i) s.positions.push_back(static_cast<int>(i));
  std::vector<bool> eligible(ns + nt, true);
  eligible[ns - 1] = false;
  eligible[ns + nt - 1] = false;
  apply_mask(s, eligible, config, range, seed);
  return s;
}

Xlm::Xlm(const XlmConfig& config, std::size_t vocab_size, std::size_t expert_count)
    : config_(config), vocab_size_(vocab_size), expert_count_(expert_count) {
  if (vocab_size < static_cast<std::size_t>(Vocabulary::kFirstSos) + expert_count) {
    throw std::invalid_argument("xlm: vocabulary too small");
  }
  nn::Rng rng(config.seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(config.model_dim));
  embedding_ = params_.normal("embedding", {vocab_size, config.model_dim}, stddev, rng);
  language_ = params_.normal("language", {2, config.model_dim}, stddev, rng);
  blocks_ = nmt::ConditionalEncoder<float>::create(params_, "blocks", config.layers, config.model_dim, config.heads,
                                                   config.ff_dim, rng);
  head_bias_ = params_.zeros("head.bias", {vocab_size});
  positions_ = nn::sinusoidal_positions(config.max_positions, config.model_dim);
  output_mask_.assign(vocab_size, 0.0f);
  const float ninf = -std::numeric_limits<float>::infinity();
  for (int id : {Vocabulary::kPad, Vocabulary::kMask, Vocabulary::kLangSrc, Vocabulary::kLangTgt}) {
    output_mask_[static_cast<std::size_t>(id)] = ninf;
  }
  for (std::size_t z = 0; z < expert_count; ++z) output_mask_[Vocabulary::kFirstSos + z] = ninf;
}

TokenRange Xlm::token_range() const {
  return {Vocabulary::kFirstSos + static_cast<int>(expert_count_), static_cast<int>(vocab_size_)};
}

Xlm::Output Xlm::forward(const std::vector<MaskedSequence>& batch) const {
  if (batch.empty()) throw std::invalid_argument("xlm: empty batch");
  const std::size_t d = config_.model_dim;
  Output out;
  std::vector<std::size_t> lengths;
  for (const auto& s : batch) {
    if (s.input.empty() || s.language.size() != s.input.size() || s.positions.size() != s.input.size()) {
      throw std::invalid_argument("xlm: malformed masked sequence");
    }
    lengths.push_back(s.input.size());
    out.len = std::max(out.len, s.input.size());
  }
  const std::size_t rows = batch.size() * out.len;
  std::vector<int> ids(rows, Vocabulary::kPad), langs(rows, 0);
  std::vector<float> pos(rows * d, 0.0f);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < batch[b].input.size(); ++i) {
      const std::size_t r = b * out.len + i;
      const int t = batch[b].input[i];
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) throw std::invalid_argument("xlm: token outside vocabulary");
      ids[r] = t;
      langs[r] = batch[b].language[i];
      const auto p = static_cast<std::size_t>(batch[b].positions[i]);
      if (p >= config_.max_positions) throw std::invalid_argument("xlm: position exceeds table");
      for (std::size_t c = 0; c < d; ++c) pos[r * d + c] = static_cast<float>(positions_[p * d + c]);
    }
  }
  auto e = nn::scale(nn::embedding(embedding_, ids), static_cast<float>(std::sqrt(static_cast<double>(d))));
  e = nn::add(nn::add_const(e, pos), nn::embedding(language_, langs));
  nmt::AttentionLayout layout{batch.size(), out.len, out.len, lengths, false};
  out.states = blocks_.forward(e, layout, nmt::BlockMode::encode, nullptr);
  std::vector<float> mask(rows * vocab_size_);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(output_mask_.begin(), output_mask_.end(), mask.begin() + static_cast<std::ptrdiff_t>(r * vocab_size_));
  out.logits = nn::add_const(nn::add_row(nn::matmul_bt(out.states, embedding_), head_bias_), mask);
  return out;
}

Tensor<float> Xlm::loss(const std::vector<MaskedSequence>& batch) const {
  auto out = forward(batch);
  std::vector<int> targets(batch.size() * out.len, -1);
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < batch[b].labels.size(); ++i) {
      targets[b * out.len + i] = batch[b].labels[i];
      count += batch[b].labels[i] >= 0;
    }
  }
  if (count == 0) throw std::invalid_argument("xlm: batch has no prediction positions");
  return nn::scale(nn::sum(nn::cross_entropy_rows(out.logits, targets)), 1.0f / static_cast<float>(count));
}

std::optional<double> pretrain_step(Xlm& model, const std::vector<MaskedSequence>& batch,
                                    nn::Adam<float>& optimizer) {
  std::size_t count = 0;
  for (const auto& s : batch) count += s.prediction_count();
  if (count == 0) return std::nullopt;
  auto loss = model.loss(batch);
  loss.backward();
  optimizer.step();
  return static_cast<double>(loss.item());
}

std::vector<XlmTrainLog> pretrain(Xlm& model, const std::vector<TokenPair>& pairs, const XlmTrainConfig& config,
                                  const std::function<void(const XlmTrainLog&)>& on_log) {
  if (pairs.empty()) throw std::invalid_argument("xlm pretrain: no pairs");
  nn::AdamConfig adam;
  adam.lr = config.lr;
  adam.clip_norm = config.clip_norm;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  nn::Adam<float> optimizer(model.params().select(), adam);
  nn::Rng rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  const auto range = model.token_range();
  std::vector<XlmTrainLog> logs;
  double acc = 0.0;
  std::size_t acc_steps = 0, skipped = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const double warm = config.warmup == 0 ? 1.0 : std::min(1.0, static_cast<double>(step + 1) / config.warmup);
    optimizer.set_lr(config.lr * warm);
    const bool tlm = unit(rng) < config.tlm_mix;
    std::vector<MaskedSequence> batch;
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      const auto& p = pairs[pick(rng)];
      if (tlm) {
        batch.push_back(tlm_batch(p, config.mask, range, rng()));
      } else {
        const bool target_side = unit(rng) < 0.5;
        batch.push_back(mlm_mask(target_side ? p.target : p.source, target_side ? 1 : 0, config.mask, range, rng()));
      }
    }
    if (auto loss = pretrain_step(model, batch, optimizer)) {
      acc += *loss;
      ++acc_steps;
    } else {
      ++skipped;
    }
    if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || step + 1 == config.steps)) {
      XlmTrainLog entry{step + 1, acc_steps ? acc / static_cast<double>(acc_steps) : 0.0, skipped};
      logs.push_back(entry);
      if (on_log) on_log(entry);
      acc = 0.0;
      acc_steps = 0;
      skipped = 0;
    }
  }
  return logs;
}

double masked_accuracy(const Xlm& model, const std::vector<TokenPair>& pairs, const MaskConfig& mask,
                       std::uint64_t seed) {
  nn::NoGradGuard guard;
  nn::Rng rng(seed);
  std::size_t correct = 0, total = 0;
  const std::size_t V = model.vocab_size();
  for (std::size_t start = 0; start < pairs.size(); start += 64) {
    std::vector<MaskedSequence> batch;
    for (std::size_t i = start; i < std::min(pairs.size(), start + 64); ++i) {
      batch.push_back(tlm_batch(pairs[i], mask, model.token_range(), rng()));
    }
    auto out = model.forward(batch);
    auto logits = out.logits.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (auto i : batch[b].prediction_positions()) {
        const float* row = logits.data() + (b * out.len + i) * V;
        correct += static_cast<int>(std::max_element(row, row + V) - row) == batch[b].labels[i];
        ++total;
      }
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TargetView target_states_and_distributions(const Xlm& model, const TokenPair& pair) {
  nn::NoGradGuard guard;
  MaskConfig none;
  none.select_rate = 0.0;
  const auto plain = tlm_batch(pair, none, model.token_range(), 0);
  const std::size_t offset = pair.source.size() + 1;
  const std::size_t n = pair.target.size();
  const std::size_t d = model.config().model_dim, V = model.vocab_size();
  TargetView view;
  view.rows = n;
  if (n == 0) return view;
  auto unmasked = model.forward({plain});
  auto states = unmasked.states.values();
  view.states.assign(states.begin() + static_cast<std::ptrdiff_t>(offset * d),
                     states.begin() + static_cast<std::ptrdiff_t>((offset + n) * d));

  std::vector<MaskedSequence> masked(n, plain);
  for (std::size_t i = 0; i < n; ++i) masked[i].input[offset + i] = Vocabulary::kMask;
  auto out = model.forward(masked);
  auto logits = out.logits.values();
  view.probs.reserve(n * V);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = nn::softmax_double(logits.subspan((i * out.len + offset + i) * V, V));
    view.probs.insert(view.probs.end(), p.begin(), p.end());
  }
  return view;
}

void save_xlm(const std::filesystem::path& dir, const Xlm& model, std::uint64_t vocab_hash) {
  nlohmann::json meta = {{"model", "xlm"},
                         {"config", to_json(model.config())},
                         {"vocab_size", model.vocab_size()},
                         {"experts", model.expert_count()},
                         {"vocab_hash", nn::hash_hex(vocab_hash)}};
  nn::save_checkpoint(dir, model.params(), meta);
}

Xlm load_xlm(const std::filesystem::path& dir, std::uint64_t expected_vocab_hash) {
  auto meta = nn::read_checkpoint_meta(dir);
  nn::check_meta(meta, "xlm", expected_vocab_hash);
  Xlm model(xlm_config_from_json(meta.at("config")), meta.at("vocab_size").get<std::size_t>(),
            meta.at("experts").get<std::size_t>());
  nn::load_checkpoint(dir, model.params());
  return model;
}

}  // namespace qe::xlm
