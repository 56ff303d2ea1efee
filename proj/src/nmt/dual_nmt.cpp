#include "qe/nmt/dual_nmt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qe/nn/checkpoint.hpp"

namespace qe::nmt {

using corpus::Vocabulary;

nlohmann::json to_json(const NmtConfig& c) {
  return {{"model_dim", c.model_dim}, {"heads", c.heads},     {"layers", c.layers},
          {"ff_dim", c.ff_dim},       {"experts", c.experts}, {"max_positions", c.max_positions},
          {"seed", c.seed}};
}

NmtConfig nmt_config_from_json(const nlohmann::json& j) {
  NmtConfig c;
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.experts = j.at("experts").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::vector<TokenPair> tokenize_pairs(const corpus::Tokenizer& tokenizer, const std::vector<corpus::ParallelPair>& pairs) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({tokenizer.encode(p.source).ids, tokenizer.encode(p.target).ids});
  return out;
}

std::vector<int> responsibility(const std::vector<double>& nlls) {
  if (nlls.empty()) throw std::invalid_argument("responsibility: no experts");
  std::size_t best = 0;
  for (std::size_t z = 1; z < nlls.size(); ++z) {
    if (nlls[z] < nlls[best]) best = z;
  }
  std::vector<int> r(nlls.size(), 0);
  r[best] = 1;
  return r;
}

namespace {

std::size_t argmin(const std::vector<double>& v) {
  auto r = responsibility(v);
  return static_cast<std::size_t>(std::find(r.begin(), r.end(), 1) - r.begin());
}

std::vector<double> per_sample_sums(std::span<const float> rows, std::size_t batch, std::size_t len) {
  std::vector<double> out(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < len; ++i) out[b] += static_cast<double>(rows[b * len + i]);
  return out;
}

}  // namespace

DualNmt::DualNmt(const NmtConfig& config, std::size_t vocab_size) : config_(config), vocab_size_(vocab_size) {
  if (config.experts == 0) throw std::invalid_argument("dual nmt: expert count must be >= 1");
  if (vocab_size < static_cast<std::size_t>(Vocabulary::kFirstSos) + config.experts) {
    throw std::invalid_argument("dual nmt: vocabulary too small for " + std::to_string(config.experts) + " experts");
  }
  nn::Rng rng(config.seed);
  embedding_ = params_.normal("embedding", {vocab_size, config.model_dim},
                              1.0 / std::sqrt(static_cast<double>(config.model_dim)), rng);
  enc_a_ = ConditionalEncoder<float>::create(params_, "enc_a", config.layers, config.model_dim, config.heads,
                                             config.ff_dim, rng);
  enc_b_ = ConditionalEncoder<float>::create(params_, "enc_b", config.layers, config.model_dim, config.heads,
                                             config.ff_dim, rng);
  positions_ = nn::sinusoidal_positions(config.max_positions, config.model_dim);
  output_mask_.assign(vocab_size, 0.0f);
  const float ninf = -std::numeric_limits<float>::infinity();
  for (int id : {Vocabulary::kPad, Vocabulary::kMask, Vocabulary::kLangSrc, Vocabulary::kLangTgt}) {
    output_mask_[static_cast<std::size_t>(id)] = ninf;
  }
  for (std::size_t z = 0; z < config.experts; ++z) output_mask_[Vocabulary::kFirstSos + z] = ninf;
}

PaddedBatch DualNmt::pad(const std::vector<TokenIds>& seqs, int prefix, int suffix) const {
  PaddedBatch p;
  p.batch = seqs.size();
  for (const auto& s : seqs) {
    p.lengths.push_back(s.size() + (prefix >= 0 ? 1 : 0) + (suffix >= 0 ? 1 : 0));
    p.len = std::max(p.len, p.lengths.back());
  }
  p.ids.assign(p.batch * p.len, Vocabulary::kPad);
  for (std::size_t b = 0; b < p.batch; ++b) {
    std::size_t i = b * p.len;
    if (prefix >= 0) p.ids[i++] = prefix;
    for (int t : seqs[b]) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) {
        throw std::invalid_argument("dual nmt: token id " + std::to_string(t) + " outside vocabulary");
      }
      p.ids[i++] = t;
    }
    if (suffix >= 0) p.ids[i++] = suffix;
  }
  return p;
}

Tensor<float> DualNmt::embed(const PaddedBatch& batch) const {
  if (batch.len > config_.max_positions) {
    throw std::invalid_argument("dual nmt: sequence length " + std::to_string(batch.len) + " exceeds " +
                                std::to_string(config_.max_positions) + " positions");
  }
  const std::size_t d = config_.model_dim;
  std::vector<float> pos(batch.batch * batch.len * d);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t i = 0; i < batch.len; ++i)
      for (std::size_t c = 0; c < d; ++c) pos[(b * batch.len + i) * d + c] = static_cast<float>(positions_[i * d + c]);
  auto e = nn::scale(nn::embedding(embedding_, batch.ids), static_cast<float>(std::sqrt(static_cast<double>(d))));
  return nn::add_const(e, pos);
}

EncodedBatch DualNmt::encode(const ConditionalEncoder<float>& encoder, const std::vector<TokenIds>& seqs,
                             bool skip_zero_branch) const {
  if (seqs.empty()) throw std::invalid_argument("encode: empty batch");
  for (const auto& s : seqs) {
    if (s.empty()) throw std::invalid_argument("encode: empty sequence");
  }
  EncodedBatch out;
  out.input = pad(seqs, -1, Vocabulary::kEos);
  AttentionLayout layout{out.input.batch, out.input.len, out.input.len, out.input.lengths, false};
  out.states = encoder.forward(embed(out.input), layout, BlockMode::encode, nullptr, skip_zero_branch);
  return out;
}

DecodedBatch DualNmt::decode(const ConditionalEncoder<float>& decoder, const EncodedBatch& context,
                             const std::vector<TokenIds>& targets, const std::vector<std::size_t>& experts) const {
  if (targets.size() != context.input.batch || experts.size() != targets.size()) {
    throw std::invalid_argument("decode: context, targets and experts disagree on batch size");
  }
  DecodedBatch out;
  PaddedBatch& in = out.input;
  in.batch = targets.size();
  for (const auto& t : targets) in.len = std::max(in.len, t.size() + 1);
  in.ids.assign(in.batch * in.len, Vocabulary::kPad);
  out.targets.assign(in.batch * in.len, -1);
  for (std::size_t b = 0; b < in.batch; ++b) {
    if (experts[b] >= config_.experts) {
      throw std::invalid_argument("decode: expert " + std::to_string(experts[b]) + " out of range");
    }
    const std::size_t row = b * in.len;
    in.ids[row] = Vocabulary::kFirstSos + static_cast<int>(experts[b]);
    for (std::size_t i = 0; i < targets[b].size(); ++i) {
      const int t = targets[b][i];
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) {
        throw std::invalid_argument("decode: token id " + std::to_string(t) + " outside vocabulary");
      }
      in.ids[row + i + 1] = t;
      out.targets[row + i] = t;
    }
    out.targets[row + targets[b].size()] = Vocabulary::kEos;
    in.lengths.push_back(targets[b].size() + 1);
  }
  AttentionLayout self{in.batch, in.len, in.len, in.lengths, true};
  CrossContext<float> cross{context.states,
                            AttentionLayout{in.batch, in.len, context.input.len, context.input.lengths, false}};
  out.states = decoder.forward(embed(in), self, BlockMode::decode, &cross);
  std::vector<float> mask(in.batch * in.len * vocab_size_);
  for (std::size_t r = 0; r < in.batch * in.len; ++r)
    std::copy(output_mask_.begin(), output_mask_.end(), mask.begin() + static_cast<std::ptrdiff_t>(r * vocab_size_));
  out.logits = nn::add_const(nn::matmul_bt(out.states, embedding_), mask);
  return out;
}

std::vector<double> DualNmt::expert_nlls(Direction d, const std::vector<TokenIds>& sources,
                                         const std::vector<TokenIds>& targets, std::size_t expert) const {
  nn::NoGradGuard guard;
  auto ctx = encode(source_encoder(d), sources);
  auto dec = decode(target_decoder(d), ctx, targets, std::vector<std::size_t>(targets.size(), expert));
  auto ce = nn::cross_entropy_rows(dec.logits, dec.targets);
  return per_sample_sums(ce.values(), dec.input.batch, dec.input.len);
}

double DualNmt::expert_nll(Direction d, const TokenIds& source, const TokenIds& target, std::size_t expert) const {
  return expert_nlls(d, {source}, {target}, expert)[0];
}

MixtureResult DualNmt::mixture_loss(Direction d, const std::vector<TokenIds>& sources,
                                    const std::vector<TokenIds>& targets) const {
  auto ctx = encode(source_encoder(d), sources);
  const auto& decoder = target_decoder(d);
  const std::size_t n = targets.size();
  MixtureResult out;
  out.winners.assign(n, 0);
  if (config_.experts > 1) {
    std::vector<std::vector<double>> scores(n, std::vector<double>(config_.experts));
    nn::NoGradGuard guard;
    for (std::size_t z = 0; z < config_.experts; ++z) {
      auto dec = decode(decoder, ctx, targets, std::vector<std::size_t>(n, z));
      auto sums = per_sample_sums(nn::cross_entropy_rows(dec.logits, dec.targets).values(), n, dec.input.len);
      for (std::size_t b = 0; b < n; ++b) scores[b][z] = sums[b];
    }
    for (std::size_t b = 0; b < n; ++b) out.winners[b] = argmin(scores[b]);
  }
  auto dec = decode(decoder, ctx, targets, out.winners);
  auto ce = nn::cross_entropy_rows(dec.logits, dec.targets);
  out.nll = per_sample_sums(ce.values(), n, dec.input.len);
  out.loss = nn::sum(ce);
  return out;
}

std::vector<GreedyResult> DualNmt::greedy_decode(Direction d, const std::vector<TokenIds>& sources,
                                                 std::size_t expert, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  nn::NoGradGuard guard;
  auto ctx = encode(source_encoder(d), sources);
  const std::size_t n = sources.size();
  std::vector<TokenIds> prefix(n);
  std::vector<GreedyResult> out(n);
  std::vector<bool> done(n, false);
  std::size_t open = n;
  for (std::size_t step = 0; step < max_len && open > 0; ++step) {
    auto dec = decode(target_decoder(d), ctx, prefix, std::vector<std::size_t>(n, expert));
    auto logits = dec.logits.values();
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t row = b * dec.input.len + step;
      auto first = logits.begin() + static_cast<std::ptrdiff_t>(row * vocab_size_);
      const int next = static_cast<int>(std::max_element(first, first + static_cast<std::ptrdiff_t>(vocab_size_)) - first);
      prefix[b].push_back(next);
      if (done[b]) continue;
      if (next == Vocabulary::kEos) {
        done[b] = true;
        --open;
      } else {
        out[b].tokens.push_back(next);
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) out[b].truncated = !done[b];
  return out;
}

GreedyResult DualNmt::greedy_decode(Direction d, const TokenIds& source, std::size_t expert,
                                    std::size_t max_len) const {
  return greedy_decode(d, std::vector<TokenIds>{source}, expert, max_len)[0];
}

TeacherForced DualNmt::teacher_forced(Direction d, const TokenIds& source, const TokenIds& target,
                                      std::size_t expert) const {
  nn::NoGradGuard guard;
  auto ctx = encode(source_encoder(d), {source});
  auto dec = decode(target_decoder(d), ctx, {target}, {expert});
  return slice_teacher_forced(dec, 0, target.size());
}

std::vector<TeacherForced> DualNmt::teacher_forced_all(Direction d, const TokenIds& source,
                                                       const TokenIds& target) const {
  nn::NoGradGuard guard;
  const std::size_t k = config_.experts;
  std::vector<std::size_t> experts(k);
  std::iota(experts.begin(), experts.end(), 0);
  auto ctx = encode(source_encoder(d), std::vector<TokenIds>(k, source));
  auto dec = decode(target_decoder(d), ctx, std::vector<TokenIds>(k, target), experts);
  std::vector<TeacherForced> out;
  for (std::size_t z = 0; z < k; ++z) out.push_back(slice_teacher_forced(dec, z, target.size()));
  return out;
}

TeacherForced DualNmt::slice_teacher_forced(const DecodedBatch& dec, std::size_t b, std::size_t rows) const {
  TeacherForced out;
  out.rows = rows;
  const std::size_t dm = config_.model_dim;
  const std::size_t first = b * dec.input.len;
  auto states = dec.states.values();
  out.states.assign(states.begin() + static_cast<std::ptrdiff_t>(first * dm),
                    states.begin() + static_cast<std::ptrdiff_t>((first + rows) * dm));
  auto logits = dec.logits.values();
  out.probs.reserve(rows * vocab_size_);
  for (std::size_t r = 0; r < rows; ++r) {
    auto p = nn::softmax_double(logits.subspan((first + r) * vocab_size_, vocab_size_));
    out.probs.insert(out.probs.end(), p.begin(), p.end());
  }
  return out;
}

DualStepLosses dual_train_step(DualNmt& model, const std::vector<TokenPair>& batch, nn::Adam<float>& optimizer,
                               bool dual) {
  if (batch.empty()) throw std::invalid_argument("dual_train_step: empty batch");
  std::vector<TokenIds> xs, ys;
  for (const auto& p : batch) {
    xs.push_back(p.source);
    ys.push_back(p.target);
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  auto run = [&](Direction d, const std::vector<TokenIds>& src, const std::vector<TokenIds>& tgt) {
    auto r = model.mixture_loss(d, src, tgt);
    nn::scale(r.loss, inv).backward();
    optimizer.step();
    return std::accumulate(r.nll.begin(), r.nll.end(), 0.0) / static_cast<double>(r.nll.size());
  };
  DualStepLosses out;
  out.primal = run(Direction::primal, xs, ys);
  if (dual) out.dual = run(Direction::dual, ys, xs);
  return out;
}

std::vector<NmtTrainLog> train_nmt(DualNmt& model, const std::vector<TokenPair>& pairs, const NmtTrainConfig& config,
                                   const std::function<void(const NmtTrainLog&)>& on_log) {
  if (pairs.empty()) throw std::invalid_argument("train_nmt: no training pairs");
  nn::AdamConfig adam;
  adam.lr = config.lr;
  adam.clip_norm = config.clip_norm;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  nn::Adam<float> optimizer(model.params().select(), adam);
  nn::Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t bs = std::min(config.batch_size, pairs.size());
  std::vector<NmtTrainLog> logs;
  NmtTrainLog acc;
  std::size_t acc_steps = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const double warm = config.warmup == 0 ? 1.0 : std::min(1.0, static_cast<double>(step + 1) / config.warmup);
    optimizer.set_lr(config.lr * warm);
    std::vector<TokenPair> batch;
    for (std::size_t i = 0; i < bs; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(pairs[order[cursor++]]);
    }
    auto l = dual_train_step(model, batch, optimizer, config.dual);
    acc.primal += l.primal;
    acc.dual += l.dual;
    ++acc_steps;
    if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || step + 1 == config.steps)) {
      NmtTrainLog entry{step + 1, acc.primal / acc_steps, acc.dual / acc_steps};
      logs.push_back(entry);
      if (on_log) on_log(entry);
      acc = {};
      acc_steps = 0;
    }
  }
  return logs;
}

double teacher_forced_accuracy(const DualNmt& model, Direction d, const std::vector<TokenPair>& pairs,
                               std::size_t batch_size) {
  nn::NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  const std::size_t V = model.vocab_size();
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    std::vector<TokenIds> src, tgt;
    for (std::size_t i = start; i < end; ++i) {
      src.push_back(d == Direction::primal ? pairs[i].source : pairs[i].target);
      tgt.push_back(d == Direction::primal ? pairs[i].target : pairs[i].source);
    }
    const std::size_t n = src.size();
    auto ctx = model.encode(model.source_encoder(d), src);
    std::vector<double> best_nll(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> best_hits(n, 0);
    for (std::size_t z = 0; z < model.config().experts; ++z) {
      auto dec = model.decode(model.target_decoder(d), ctx, tgt, std::vector<std::size_t>(n, z));
      auto nll = per_sample_sums(nn::cross_entropy_rows(dec.logits, dec.targets).values(), n, dec.input.len);
      auto logits = dec.logits.values();
      for (std::size_t b = 0; b < n; ++b) {
        if (!(nll[b] < best_nll[b])) continue;
        best_nll[b] = nll[b];
        std::size_t hits = 0;
        for (std::size_t i = 0; i < tgt[b].size(); ++i) {
          const float* row = logits.data() + (b * dec.input.len + i) * V;
          hits += static_cast<int>(std::max_element(row, row + V) - row) == tgt[b][i];
        }
        best_hits[b] = hits;
      }
    }
    for (std::size_t b = 0; b < n; ++b) {
      correct += best_hits[b];
      total += tgt[b].size();
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

void save_nmt(const std::filesystem::path& dir, const DualNmt& model, std::uint64_t vocab_hash) {
  nlohmann::json meta = {{"model", "dual-nmt"},
                         {"config", to_json(model.config())},
                         {"vocab_size", model.vocab_size()},
                         {"vocab_hash", nn::hash_hex(vocab_hash)}};
  nn::save_checkpoint(dir, model.params(), meta);
}

DualNmt load_nmt(const std::filesystem::path& dir, std::uint64_t expected_vocab_hash) {
  auto meta = nn::read_checkpoint_meta(dir);
  nn::check_meta(meta, "dual-nmt", expected_vocab_hash);
  DualNmt model(nmt_config_from_json(meta.at("config")), meta.at("vocab_size").get<std::size_t>());
  nn::load_checkpoint(dir, model.params());
  return model;
}

}  // namespace qe::nmt
