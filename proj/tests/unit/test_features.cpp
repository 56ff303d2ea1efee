#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "qe/features/features.hpp"

using namespace qe;
using namespace qe::features;

namespace {

struct Toy {
  corpus::SyntheticLanguage language = corpus::SyntheticLanguage::generate({});
  corpus::Tokenizer tokenizer;
  std::vector<corpus::ParallelPair> raw;

  explicit Toy(std::size_t experts) {
    raw = corpus::gen_parallel(3, {6, 1, 4, 8}, language);
    std::vector<corpus::Sentence> sents;
    for (const auto& w : language.source_words()) sents.push_back({w});
    for (const auto& w : language.target_words()) sents.push_back({w});
    // Few merges so that words split into several pieces.
    tokenizer = corpus::Tokenizer::train(corpus::word_counts(sents), 8, experts);
  }
  TokenIds source(std::size_t i) const { return tokenizer.encode(raw[i].source).ids; }
  corpus::EncodedSentence mt(std::size_t i) const { return tokenizer.encode(raw[i].target); }
};

nmt::NmtConfig tiny_nmt(std::size_t experts) {
  nmt::NmtConfig c;
  c.model_dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 16;
  c.experts = experts;
  return c;
}

xlm::XlmConfig tiny_xlm() {
  xlm::XlmConfig c;
  c.model_dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 16;
  return c;
}

std::span<const float> block(const FeatureMatrix& m, std::size_t r, std::size_t offset, std::size_t len) {
  return m.row(r).subspan(offset, len);
}

bool same(std::span<const float> a, std::span<const float> b) { return std::equal(a.begin(), a.end(), b.begin(), b.end()); }

}  // namespace

TEST_CASE("mismatch features on fixed distributions") {
  std::vector<double> d = {0.7, 0.2, 0.1};
  auto a = mismatch_features(d, 0);
  CHECK(a[0] == doctest::Approx(-0.3567).epsilon(1e-4));
  CHECK(a[1] == doctest::Approx(-0.3567).epsilon(1e-4));
  CHECK(a[2] == 0.0);
  CHECK(a[3] == 1.0);
  auto b = mismatch_features(d, 2);
  CHECK(b[0] == doctest::Approx(-2.3026).epsilon(1e-4));
  CHECK(b[1] == doctest::Approx(-0.3567).epsilon(1e-4));
  CHECK(b[2] == doctest::Approx(-1.9459).epsilon(1e-4));
  CHECK(b[3] == 0.0);
  std::vector<double> u(4, 0.25);
  auto c = mismatch_features(u, 0);
  CHECK(c[0] == doctest::Approx(-1.3863).epsilon(1e-4));
  CHECK(c[2] == 0.0);
  CHECK(c[3] == 1.0);
  // Tie broken towards the lowest id, so a later tied token is not the argmax.
  CHECK(mismatch_features(u, 3)[3] == 0.0);
  std::vector<double> z = {1.0, 0.0};
  CHECK(mismatch_features(z, 1)[0] == doctest::Approx(std::log(1e-12)));
  CHECK_THROWS(mismatch_features(z, 2));
}

TEST_CASE("mismatch features are internally consistent") {
  std::mt19937_64 rng(9);
  std::gamma_distribution<double> g(0.3, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> d(7);
    double s = 0.0;
    for (auto& x : d) s += (x = g(rng));
    for (auto& x : d) x /= s;
    for (int y = 0; y < 7; ++y) {
      auto f = mismatch_features(d, y);
      CHECK(f[2] == f[0] - f[1]);
      CHECK(f[2] <= 0.0);
      CHECK((f[3] == 1.0) == (f[2] == 0.0));
    }
  }
}

TEST_CASE("model feature is an elementwise product") {
  std::vector<float> z = {1, -2, 3}, e = {0.5f, 0.5f, 2};
  CHECK(model_feature(z, e) == std::vector<float>{0.5f, -1, 6});
  CHECK(model_feature(std::vector<float>(3, 0.0f), e) == std::vector<float>(3, 0.0f));
  std::vector<float> nz = {-1, 2, -3}, ne = {-0.5f, -0.5f, -2};
  CHECK(model_feature(nz, ne) == model_feature(z, e));
  CHECK(dual_feature(z, e) == model_feature(z, e));
  CHECK_THROWS_AS(model_feature(z, std::vector<float>(2)), std::invalid_argument);
}

TEST_CASE("feature width") {
  CHECK(feature_width(5, 512) == 5140);
  CHECK(feature_width(1, 8) == 20);
  CHECK(feature_width(3, 64) == 3 * 132);
}

TEST_CASE("nmt stream assembly") {
  Toy toy(2);
  nmt::DualNmt model(tiny_nmt(2), toy.tokenizer.vocab().size());
  const std::size_t d = 8, w = slot_width(d), V = model.vocab_size();
  auto x = toy.source(0);
  auto y = toy.mt(0);
  REQUIRE(y.ids.size() > y.words);
  auto f = assemble_nmt_features(model, x, y);
  REQUIRE(f.matrix.rows == y.ids.size());
  REQUIRE(f.matrix.cols == feature_width(2, d));
  CHECK(f.word_index == y.word_index);

  const auto& table = model.embedding();
  for (std::size_t z = 0; z < 2; ++z) {
    // Oracle: the single-expert teacher-forced pass.
    auto tf = model.teacher_forced(nmt::Direction::primal, x, y.ids, z);
    for (std::size_t i = 0; i < y.ids.size(); ++i) {
      auto row = f.matrix.row(i).subspan(z * w, w);
      for (std::size_t j = 0; j < d; ++j) {
        const float e = table.at(static_cast<std::size_t>(y.ids[i]), j);
        CHECK(row[j] == doctest::Approx(tf.states[i * d + j] * e).epsilon(1e-4));
      }
      const auto* p = &tf.probs[i * V];
      const double lp = std::log(p[y.ids[i]]);
      const double lmax = std::log(*std::max_element(p, p + V));
      CHECK(row[2 * d] == doctest::Approx(lp).epsilon(1e-4));
      CHECK(row[2 * d + 1] == doctest::Approx(lmax).epsilon(1e-4));
      CHECK(row[2 * d + 2] <= 0.0f);
      CHECK((row[2 * d + 3] == 1.0f) == (row[2 * d + 2] == 0.0f));
    }
  }
  // f_dual identical across slots, independent of x and distinct from f_model.
  auto other = assemble_nmt_features(model, toy.source(1), y);
  double diff = 0.0;
  for (std::size_t i = 0; i < y.ids.size(); ++i) {
    CHECK(same(block(f.matrix, i, d, d), block(f.matrix, i, w + d, d)));
    CHECK(same(block(f.matrix, i, d, d), block(other.matrix, i, d, d)));
    for (std::size_t j = 0; j < d; ++j) diff += std::abs(f.matrix.row(i)[j] - f.matrix.row(i)[d + j]);
  }
  CHECK(diff / static_cast<double>(y.ids.size() * d) > 0.0);

  auto again = assemble_nmt_features(model, x, y);
  CHECK(again.matrix.values == f.matrix.values);

  auto ablated = assemble_nmt_features(model, x, y, false);
  for (std::size_t i = 0; i < y.ids.size(); ++i) {
    for (std::size_t z = 0; z < 2; ++z) {
      for (float v : block(ablated.matrix, i, z * w + d, d)) CHECK(v == 0.0f);
      CHECK(same(block(ablated.matrix, i, z * w, d), block(f.matrix, i, z * w, d)));
    }
  }
}

TEST_CASE("xlm stream assembly") {
  Toy toy(3);
  xlm::Xlm model(tiny_xlm(), toy.tokenizer.vocab().size(), 3);
  nmt::DualNmt nmt_model(tiny_nmt(3), toy.tokenizer.vocab().size());
  const std::size_t d = 8, w = slot_width(d);
  auto y = toy.mt(2);
  auto f = assemble_xlm_features(model, 3, toy.source(2), y);
  CHECK(f.matrix.cols == assemble_nmt_features(nmt_model, toy.source(2), y).matrix.cols);
  REQUIRE(f.matrix.rows == y.ids.size());
  auto view = xlm::target_states_and_distributions(model, {toy.source(2), y.ids});
  for (std::size_t i = 0; i < f.matrix.rows; ++i) {
    CHECK(same(block(f.matrix, i, 0, d), block(f.matrix, i, d, d)));
    CHECK(same(block(f.matrix, i, 0, w), block(f.matrix, i, w, w)));
    CHECK(same(block(f.matrix, i, 0, w), block(f.matrix, i, 2 * w, w)));
    const double lp = std::log(view.probs[i * model.vocab_size() + static_cast<std::size_t>(y.ids[i])]);
    CHECK(f.matrix.row(i)[2 * d] == doctest::Approx(lp).epsilon(1e-5));
  }
}

TEST_CASE("word pooling and gap features") {
  TokenFeatures t{FeatureMatrix(3, 2), {0, 0, 1}, 2};
  t.matrix.values = {1, 2, 3, 4, 10, 20};
  auto words = pool_words(t);
  CHECK(words.values == std::vector<float>{2, 3, 10, 20});
  auto gaps = gap_features(words);
  REQUIRE(gaps.rows == 3);
  CHECK(gaps.values == std::vector<float>{2, 3, 6, 11.5f, 10, 20});

  FeatureMatrix one(1, 2);
  one.values = {5, -1};
  auto g1 = gap_features(one);
  CHECK(g1.values == std::vector<float>{5, -1, 5, -1});
  CHECK_THROWS(gap_features(FeatureMatrix(0, 2)));

  TokenFeatures orphan{FeatureMatrix(1, 2), {1}, 2};
  CHECK_THROWS(pool_words(orphan));
  for (std::size_t n = 1; n < 6; ++n) CHECK(gap_features(FeatureMatrix(n, 3)).rows == n + 1);
}

TEST_CASE("feature cache round trip") {
  std::vector<SampleFeatures> samples(2);
  samples[0].nmt = {FeatureMatrix(2, 3), {0, 0}, 1};
  samples[0].nmt.matrix.values = {1, 2, 3, 4, 5, 6};
  samples[0].xlm = samples[0].nmt;
  samples[0].xlm->matrix.values = {6, 5, 4, 3, 2, 1};
  samples[1].nmt = {FeatureMatrix(1, 3), {0}, 1};
  samples[1].nmt.matrix.values = {7, 8, 9};
  auto dir = std::filesystem::temp_directory_path() / "qe_feature_cache";
  std::filesystem::remove_all(dir);
  save_feature_cache(dir, samples, {{"note", "x"}});
  nlohmann::json meta;
  auto back = load_feature_cache(dir, &meta);
  REQUIRE(back.size() == 2);
  CHECK(meta["note"] == "x");
  CHECK(back[0].nmt.matrix.values == samples[0].nmt.matrix.values);
  CHECK(back[0].nmt.word_index == samples[0].nmt.word_index);
  CHECK(back[0].nmt.words == 1);
  REQUIRE(back[0].xlm.has_value());
  CHECK(back[0].xlm->matrix.values == samples[0].xlm->matrix.values);
  CHECK_FALSE(back[1].xlm.has_value());
  CHECK(back[1].nmt.matrix.rows == 1);
  std::filesystem::resize_file(dir / "features.bin", 20);
  CHECK_THROWS(load_feature_cache(dir));
}
