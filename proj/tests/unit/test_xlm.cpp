#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "qe/xlm/xlm.hpp"

using namespace qe;
using namespace qe::xlm;

namespace {

struct Toy {
  corpus::SyntheticLanguage language = corpus::SyntheticLanguage::generate({});
  corpus::Tokenizer tokenizer;
  std::vector<TokenPair> pairs;

  explicit Toy(std::size_t n, std::uint64_t seed = 3) {
    auto raw = corpus::gen_parallel(seed, {n, 1, 4, 8}, language);
    std::vector<corpus::Sentence> sents;
    for (const auto& w : language.source_words()) sents.push_back({w});
    for (const auto& w : language.target_words()) sents.push_back({w});
    tokenizer = corpus::Tokenizer::train(corpus::word_counts(sents), 200, 1);
    pairs = nmt::tokenize_pairs(tokenizer, raw);
  }
};

XlmConfig tiny() {
  XlmConfig c;
  c.model_dim = 16;
  c.heads = 2;
  c.ff_dim = 32;
  return c;
}

}  // namespace

TEST_CASE("mlm_mask degenerate rates") {
  TokenRange range{7, 40};
  TokenIds seq = {10, 11, 12, 13};
  MaskConfig none;
  none.select_rate = 0.0;
  auto a = mlm_mask(seq, 0, none, range, 1);
  CHECK(a.prediction_count() == 0);
  CHECK(a.input == TokenIds{10, 11, 12, 13, corpus::Vocabulary::kEos});
  MaskConfig all;
  all.select_rate = 1.0;
  all.mask_share = 1.0;
  all.random_share = 0.0;
  auto b = mlm_mask(seq, 1, all, range, 1);
  CHECK(b.prediction_positions() == std::vector<std::size_t>{0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b.input[i] == corpus::Vocabulary::kMask);
    CHECK(b.labels[i] == seq[i]);
  }
  CHECK(b.input[4] == corpus::Vocabulary::kEos);
  CHECK(b.labels[4] == -1);
  CHECK(b.language == std::vector<int>(5, 1));
}

TEST_CASE("mlm_mask selection rate concentrates") {
  TokenRange range{7, 40};
  TokenIds seq(10000);
  for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = 7 + static_cast<int>(i % 33);
  auto m = mlm_mask(seq, 0, MaskConfig{}, range, 42);
  const double frac = static_cast<double>(m.prediction_count()) / 10000.0;
  CHECK(frac >= 0.13);
  CHECK(frac <= 0.17);
  std::size_t masked = 0, unchanged = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (m.labels[i] < 0) {
      CHECK(m.input[i] == seq[i]);
      continue;
    }
    masked += m.input[i] == corpus::Vocabulary::kMask;
    unchanged += m.input[i] == seq[i];
    CHECK(m.input[i] >= 3);
  }
  const double mask_share = static_cast<double>(masked) / static_cast<double>(m.prediction_count());
  CHECK(mask_share == doctest::Approx(0.8).epsilon(0.08));
  CHECK(unchanged > 0);
}

TEST_CASE("tlm layout") {
  TokenPair p{{10, 11, 12}, {20, 21}};
  MaskConfig none;
  none.select_rate = 0.0;
  auto s = tlm_batch(p, none, {7, 40}, 1);
  CHECK(s.input.size() == 3 + 2 + 2);
  CHECK(s.input == TokenIds{10, 11, 12, 1, 20, 21, 1});
  CHECK(s.positions == std::vector<int>{0, 1, 2, 3, 0, 1, 2});
  int switches = 0;
  for (std::size_t i = 1; i < s.language.size(); ++i) switches += s.language[i] != s.language[i - 1];
  CHECK(switches == 1);
  CHECK(s.language[3] == 0);
  CHECK(s.language[4] == 1);
  MaskConfig all;
  all.select_rate = 1.0;
  auto f = tlm_batch(p, all, {7, 40}, 1);
  CHECK(f.labels[3] == -1);
  CHECK(f.labels[6] == -1);
  CHECK(f.prediction_count() == 5);
}

TEST_CASE("masked target attends to the source") {
  Toy toy(4);
  Xlm model(tiny(), toy.tokenizer.vocab().size(), 1);
  nn::NoGradGuard guard;
  const auto& p = toy.pairs[0];
  MaskConfig none;
  none.select_rate = 0.0;
  auto s = tlm_batch(p, none, model.token_range(), 0);
  const std::size_t target_pos = p.source.size() + 1;
  s.input[target_pos] = corpus::Vocabulary::kMask;
  auto zeroed = s;
  for (std::size_t i = 0; i < p.source.size(); ++i) zeroed.input[i] = corpus::Vocabulary::kPad;
  auto a = model.forward({s});
  auto b = model.forward({zeroed});
  double diff = 0.0;
  for (std::size_t v = 0; v < model.vocab_size(); ++v) {
    if (std::isinf(a.logits.at(target_pos, v))) continue;
    diff += std::abs(a.logits.at(target_pos, v) - b.logits.at(target_pos, v));
  }
  CHECK(diff > 1e-3);
}

TEST_CASE("fresh loss near ln V and pretraining is deterministic") {
  Toy toy(60);
  Xlm model(tiny(), toy.tokenizer.vocab().size(), 1);
  std::vector<MaskedSequence> batch;
  for (std::size_t i = 0; i < 32; ++i) batch.push_back(tlm_batch(toy.pairs[i], MaskConfig{}, model.token_range(), i));
  std::size_t predictable = 0;
  for (int id = model.token_range().first_regular; id < static_cast<int>(model.vocab_size()); ++id) ++predictable;
  const double expect = std::log(static_cast<double>(predictable + 2));  // regular tokens, EOS and UNK
  const double fresh = model.loss(batch).item();
  MESSAGE("fresh loss " << fresh << " vs " << expect);
  CHECK(std::abs(fresh - expect) < 0.2 * expect);

  MaskConfig none;
  none.select_rate = 0.0;
  std::vector<MaskedSequence> empty = {tlm_batch(toy.pairs[0], none, model.token_range(), 0)};
  nn::Adam<float> opt(model.params().select(), {});
  CHECK_FALSE(pretrain_step(model, empty, opt).has_value());

  auto run = [&] {
    Xlm m(tiny(), toy.tokenizer.vocab().size(), 1);
    XlmTrainConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 8;
    cfg.log_every = 10;
    return pretrain(m, toy.pairs, cfg);
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].loss == b[i].loss);
}

TEST_CASE("target states and pseudo-likelihood distributions") {
  Toy toy(4);
  Xlm model(tiny(), toy.tokenizer.vocab().size(), 1);
  const auto& p = toy.pairs[1];
  auto view = target_states_and_distributions(model, p);
  CHECK(view.rows == p.target.size());
  CHECK(view.states.size() == p.target.size() * 16);
  for (std::size_t r = 0; r < view.rows; ++r) {
    double s = 0.0;
    for (std::size_t v = 0; v < model.vocab_size(); ++v) s += view.probs[r * model.vocab_size() + v];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  auto again = target_states_and_distributions(model, p);
  CHECK(again.probs == view.probs);
  CHECK(again.states == view.states);
}

TEST_CASE("xlm checkpoint round trip") {
  Toy toy(4);
  Xlm model(tiny(), toy.tokenizer.vocab().size(), 1);
  auto dir = std::filesystem::temp_directory_path() / "qe_xlm_ckpt";
  std::filesystem::remove_all(dir);
  save_xlm(dir, model, toy.tokenizer.vocab().hash());
  auto loaded = load_xlm(dir, toy.tokenizer.vocab().hash());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto a = model.params()[i].tensor.values();
    auto b = loaded.params()[i].tensor.values();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK_THROWS(nmt::load_nmt(dir, toy.tokenizer.vocab().hash()));
}
