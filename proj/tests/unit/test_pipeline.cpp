#include <doctest.h>

#include <set>

#include "qe/pipeline/pipeline.hpp"

using namespace qe;
using namespace qe::pipeline;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.data.words_per_side = 10;
  c.data.parallel_pairs = 120;
  c.data.qe_samples = 80;
  c.data.max_length = 6;
  c.data.bpe_merges = 20;
  c.nmt = {16, 2, 1, 32, 2, 30, 16, 3e-3, 5, 1.0, true};
  c.xlm = {16, 2, 1, 32, 20, 16, 3e-3, 5, 1.0, 0.5, 0.15};
  c.estimator.hidden = 8;
  c.estimator.head_hidden = 8;
  c.estimator.epochs = 2;
  c.ensemble.members = 2;
  c.ensemble.folds = 2;
  c.filter.corpus_pairs = 60;
  c.filter.dev_pairs = 12;
  c.filter.nmt_steps = 20;
  c.filter.eval_every = 10;
  c.filter.best_k = 2;
  c.filter.seeds = {4};
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("run config parsing is strict") {
  auto c = run_config_from_json(nlohmann::json::object());
  CHECK(to_json(c) == to_json(RunConfig{}));

  auto d = run_config_from_json({{"nmt", {{"experts", 5}}}, {"estimator", {{"lr", 1}}}});
  CHECK(d.nmt.experts == 5);
  CHECK(d.estimator.lr == 1.0);
  CHECK(d.nmt.model_dim == RunConfig{}.nmt.model_dim);

  CHECK_THROWS_WITH_AS(run_config_from_json({{"nmt", {{"expert", 5}}}}), doctest::Contains("nmt.expert"),
                       std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"bogus", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"nmt", {{"experts", 2.5}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"nmt", {{"experts", -1}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"features", {{"use_xlm", 1}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"nmt", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"estimator", {{"pool", "median"}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"xlm", {{"model_dim", 32}}}}), std::invalid_argument);
  CHECK_NOTHROW(run_config_from_json({{"xlm", {{"model_dim", 32}}}, {"features", {{"use_xlm", false}}}}));
}

TEST_CASE("overrides win over file values") {
  RunConfig c;
  apply_override(c, "nmt.steps=12");
  apply_override(c, "estimator.pool=max");
  apply_override(c, "filter.seeds=[7,8]");
  CHECK(c.nmt.steps == 12);
  CHECK(c.estimator.pool == "max");
  CHECK(c.filter.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK_THROWS(apply_override(c, "nmt.stepz=1"));
  CHECK_THROWS(apply_override(c, "nmt.steps"));
  CHECK_THROWS(apply_override(c, "nmt.steps=abc"));
}

TEST_CASE("derived seeds are stable and distinct per tag") {
  CHECK(derive_seed(1, "nmt") == derive_seed(1, "nmt"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t m = 0; m < 10; ++m) {
    for (const char* tag : {"a", "b", "nmt-init", "xlm-init"}) seen.insert(derive_seed(m, tag));
  }
  CHECK(seen.size() == 40);
}

TEST_CASE("world generation is deterministic and splits the QE pairs") {
  auto c = tiny_config();
  auto a = make_world(c);
  auto b = make_world(c);
  CHECK(a.parallel == b.parallel);
  CHECK(a.qe.train == b.qe.train);
  CHECK(a.parallel.size() == 120);
  CHECK(a.qe.train.size() + a.qe.dev.size() + a.qe.test.size() == 80);
  c.seed = 2;
  CHECK_FALSE(make_world(c).parallel == a.parallel);
}

TEST_CASE("noisy corpus corrupts exactly the requested share") {
  auto c = tiny_config();
  auto world = make_world(c);
  auto noisy = make_noisy_corpus(c, world.language);
  CHECK(noisy.pairs.size() == 60);
  CHECK(noisy.dev.size() == 12);
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < noisy.pairs.size(); ++i) {
    if (noisy.corrupted[i]) {
      ++flagged;
    } else {
      CHECK(noisy.pairs[i].target == world.language.translate(noisy.pairs[i].source, 0));
    }
  }
  CHECK(flagged == 12);
}

TEST_CASE("tag predictions are thresholded per sentence") {
  auto p = combine_tag_predictions({{0.2, 0.6}}, {{0.5, 0.1, 0.9}}, 0.5);
  REQUIRE(p.size() == 1);
  CHECK(p[0].words == std::vector<corpus::Tag>{corpus::Tag::ok, corpus::Tag::bad});
  CHECK(p[0].gaps == std::vector<corpus::Tag>{corpus::Tag::bad, corpus::Tag::ok, corpus::Tag::bad});
  CHECK_THROWS(combine_tag_predictions({{0.1}}, {}, 0.5));
}

TEST_CASE("ablation produces four rows in order") {
  auto c = tiny_config();
  auto world = make_world(c);
  auto rows = run_ablation(c, world);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].name == "NMT");
  CHECK(rows[1].name == "+XLM");
  CHECK(rows[2].name == "+mixture&dual");
  CHECK(rows[3].name == "+f_dual");
  CHECK((!rows[0].use_xlm && rows[1].use_xlm));
  CHECK((rows[1].experts == 1 && rows[2].experts == c.nmt.experts));
  CHECK((!rows[2].include_dual && rows[3].include_dual));
  for (const auto& r : rows) {
    CHECK(r.test.tags.counts.total() > 0);
    CHECK(r.test.sentence.rmse >= 0.0);
  }
  CHECK(ablation_table(rows).find("+f_dual") != std::string::npos);
}

TEST_CASE("filtering with nothing dropped trains identical models") {
  auto c = tiny_config();
  c.filter.drop_fraction = 0.0;
  auto world = make_world(c);
  auto qe = train_pipeline(c, world);
  auto noisy = make_noisy_corpus(c, world.language);
  auto r = run_filtering_experiment(c, qe, noisy);
  CHECK(r.filter.removed == 0);
  REQUIRE(r.runs.size() == 1);
  CHECK(r.runs[0].filtered.bleu == r.runs[0].unfiltered.bleu);
  CHECK(r.runs[0].unfiltered.steps == std::vector<std::size_t>{10, 20});
  auto j = to_json(r);
  CHECK(j["filter"].contains("tp"));
  CHECK(j["runs"][0]["unfiltered"].contains("best_k_mean"));
}

TEST_CASE("stacked ensemble reports every member") {
  auto c = tiny_config();
  auto world = make_world(c);
  auto tok = train_tokenizer(c, world.parallel);
  auto nmt = train_predictor(c, tok, world.parallel, c.nmt.experts, true);
  auto pool = extract_features(nmt, nullptr, tok, world.qe.train, true);
  auto test = extract_features(nmt, nullptr, tok, world.qe.test, true);
  auto r = run_ensemble(c, pool, world.qe.train, test, world.qe.test, false);
  CHECK(r.member_test.size() == 2);
  CHECK(r.weights.size() == 2);
  CHECK(r.cv_mse >= 0.0);
}
