#include "qe/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace qe::pipeline {

using corpus::ParallelPair;
using corpus::QESample;
using estimator::Estimator;
using estimator::Task;
using features::SampleFeatures;

namespace {

void say(const Log& log, const std::string& line) {
  if (log) log(line);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Pearson is undefined on constant predictions; report 0 there.
eval::SentenceEvalReport safe_sentence_eval(const std::vector<double>& gold, const std::vector<double>& pred) {
  auto e = eval::mae_rmse(gold, pred);
  eval::SentenceEvalReport r{0.0, e.mae, e.rmse};
  try {
    r.pearson = eval::pearson(gold, pred);
  } catch (const std::invalid_argument&) {
  }
  return r;
}

std::vector<double> gold_hter(const std::vector<QESample>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.hter);
  return out;
}

}  // namespace

World make_world(const RunConfig& c) {
  c.validate();
  auto language = corpus::SyntheticLanguage::generate(language_config(c));
  corpus::ParallelConfig pc{c.data.parallel_pairs, c.data.styles, c.data.min_length, c.data.max_length};
  auto parallel = corpus::gen_parallel(derive_seed(c.seed, "parallel"), pc, language);
  corpus::ParallelConfig qc{c.data.qe_samples, c.data.styles, c.data.min_length, c.data.max_length};
  auto qe_pairs = corpus::gen_parallel(derive_seed(c.seed, "qe-pairs"), qc, language);
  auto qe = corpus::make_qe_dataset(qe_pairs, corruption_config(c), language.target_words(),
                                    derive_seed(c.seed, "corruption"));
  return {std::move(language), std::move(parallel), std::move(qe)};
}

const corpus::Sentence& corruption_pool(const corpus::SyntheticLanguage& language) {
  return language.target_words();
}

corpus::Tokenizer train_tokenizer(const RunConfig& c, const std::vector<ParallelPair>& pairs) {
  std::vector<corpus::Sentence> text;
  text.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    text.push_back(p.source);
    text.push_back(p.target);
  }
  return corpus::Tokenizer::train(corpus::word_counts(text), c.data.bpe_merges, c.nmt.experts);
}

nmt::DualNmt train_predictor(const RunConfig& c, const corpus::Tokenizer& tokenizer,
                             const std::vector<ParallelPair>& pairs, std::size_t experts, bool dual,
                             const Log& log) {
  nmt::DualNmt model(nmt_config(c, experts), tokenizer.vocab().size());
  auto train = nmt_train_config(c, dual);
  train.log_every = log ? 250 : 0;
  nmt::train_nmt(model, nmt::tokenize_pairs(tokenizer, pairs), train, [&](const nmt::NmtTrainLog& l) {
    say(log, "nmt step " + std::to_string(l.step) + " primal " + fixed(l.primal) + " dual " + fixed(l.dual));
  });
  return model;
}

xlm::Xlm train_xlm(const RunConfig& c, const corpus::Tokenizer& tokenizer, const std::vector<ParallelPair>& pairs,
                   const Log& log) {
  xlm::Xlm model(xlm_config(c), tokenizer.vocab().size(), tokenizer.vocab().expert_count());
  auto train = xlm_train_config(c);
  train.log_every = log ? 250 : 0;
  xlm::pretrain(model, nmt::tokenize_pairs(tokenizer, pairs), train, [&](const xlm::XlmTrainLog& l) {
    say(log, "xlm step " + std::to_string(l.step) + " loss " + fixed(l.loss));
  });
  return model;
}

SampleFeatures sample_features(const nmt::DualNmt& nmt, const xlm::Xlm* xlm, const corpus::Tokenizer& tokenizer,
                               const corpus::Sentence& source, const corpus::Sentence& mt, bool include_dual) {
  const auto src = tokenizer.encode(source).ids;
  const auto enc = tokenizer.encode(mt);
  SampleFeatures f;
  f.nmt = features::assemble_nmt_features(nmt, src, enc, include_dual);
  if (xlm) f.xlm = features::assemble_xlm_features(*xlm, nmt.config().experts, src, enc);
  return f;
}

std::vector<SampleFeatures> extract_features(const nmt::DualNmt& nmt, const xlm::Xlm* xlm,
                                             const corpus::Tokenizer& tokenizer,
                                             const std::vector<QESample>& samples, bool include_dual) {
  std::vector<SampleFeatures> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(sample_features(nmt, xlm, tokenizer, s.source, s.mt, include_dual));
  return out;
}

Estimator<float> train_task(const RunConfig& c, Task task, const TaskData& train, const TaskData& dev, bool use_xlm,
                            estimator::TrainReport* report, const Log& log) {
  if (!train.features || train.features->empty()) throw std::invalid_argument("train_task: no training features");
  auto tr = estimator::make_examples(task, *train.features, *train.samples, use_xlm);
  std::vector<estimator::Example> dv;
  if (dev.features) dv = estimator::make_examples(task, *dev.features, *dev.samples, use_xlm);
  const std::size_t width = train.features->front().nmt.matrix.cols;
  Estimator<float> model(estimator_config(c, task, width, use_xlm));
  std::vector<estimator::EstimatorInput> inputs;
  inputs.reserve(tr.size());
  for (const auto& e : tr) inputs.push_back(e.input);
  model.fit_normalization(inputs);
  auto r = estimator::train_estimator(model, tr, dv, estimator_train_config(c, task), [&](const estimator::EpochLog& l) {
    say(log, estimator::task_name(task) + " epoch " + std::to_string(l.epoch) + " loss " + fixed(l.train_loss) +
                 " dev " + fixed(l.dev_metric));
  });
  if (report) *report = r;
  return model;
}

std::vector<double> predict_hter(const Estimator<float>& model, const std::vector<SampleFeatures>& features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    out.push_back(model.predict_hter(estimator::make_input(Task::sentence, f, model.config().use_xlm)));
  }
  return out;
}

std::vector<std::vector<double>> predict_tag_probs(const Estimator<float>& model,
                                                   const std::vector<SampleFeatures>& features) {
  std::vector<std::vector<double>> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    out.push_back(model.predict_tags(estimator::make_input(model.config().task, f, model.config().use_xlm)).blended);
  }
  return out;
}

std::vector<eval::TagPrediction> combine_tag_predictions(const std::vector<std::vector<double>>& word_probs,
                                                         const std::vector<std::vector<double>>& gap_probs,
                                                         double threshold) {
  if (word_probs.size() != gap_probs.size()) throw std::invalid_argument("combine_tag_predictions: size mismatch");
  std::vector<eval::TagPrediction> out;
  out.reserve(word_probs.size());
  for (std::size_t i = 0; i < word_probs.size(); ++i) {
    out.push_back({estimator::threshold_tags(word_probs[i], threshold),
                   estimator::threshold_tags(gap_probs[i], threshold)});
  }
  return out;
}

nlohmann::json to_json(const QeEvaluation& e) {
  return {{"sentence", eval::to_json(e.sentence)}, {"word_gap", eval::to_json(e.tags)}};
}

QeEstimators train_estimators(const RunConfig& c, const TaskData& train, const TaskData& dev, bool use_xlm,
                              const Log& log) {
  auto sentence = train_task(c, Task::sentence, train, dev, use_xlm, nullptr, log);
  auto word = train_task(c, Task::word, train, dev, use_xlm, nullptr, log);
  auto gap = train_task(c, Task::gap, train, dev, use_xlm, nullptr, log);
  return {std::move(sentence), std::move(word), std::move(gap)};
}

QeEvaluation evaluate_estimators(const QeEstimators& models, const std::vector<SampleFeatures>& features,
                                 const std::vector<QESample>& samples, double threshold) {
  QeEvaluation e;
  e.sentence = safe_sentence_eval(gold_hter(samples), predict_hter(models.sentence, features));
  auto preds = combine_tag_predictions(predict_tag_probs(models.word, features),
                                       predict_tag_probs(models.gap, features), threshold);
  e.tags = eval::word_level_eval(samples, preds);
  return e;
}

QePipeline train_pipeline(const RunConfig& c, const World& world, const Log& log) {
  auto tokenizer = train_tokenizer(c, world.parallel);
  say(log, "tokenizer: " + std::to_string(tokenizer.vocab().size()) + " tokens");
  auto nmt = train_predictor(c, tokenizer, world.parallel, c.nmt.experts, c.nmt.dual, log);
  std::optional<xlm::Xlm> xlm;
  if (c.features.use_xlm) xlm.emplace(train_xlm(c, tokenizer, world.parallel, log));
  const xlm::Xlm* xp = xlm ? &*xlm : nullptr;
  auto train_f = extract_features(nmt, xp, tokenizer, world.qe.train, c.features.include_dual);
  auto dev_f = extract_features(nmt, xp, tokenizer, world.qe.dev, c.features.include_dual);
  say(log, "features extracted: " + std::to_string(train_f.size()) + " train, " + std::to_string(dev_f.size()) +
               " dev");
  auto est = train_estimators(c, {&train_f, &world.qe.train}, {&dev_f, &world.qe.dev}, c.features.use_xlm, log);
  auto dev = evaluate_estimators(est, dev_f, world.qe.dev, c.estimator.threshold);
  return {std::move(tokenizer), std::move(nmt), std::move(xlm), std::move(est), dev};
}

double score_pair(const QePipeline& p, const corpus::Sentence& source, const corpus::Sentence& mt,
                  const RunConfig& c) {
  auto f = sample_features(p.nmt, p.xlm ? &*p.xlm : nullptr, p.tokenizer, source, mt, c.features.include_dual);
  return p.estimators.sentence.predict_hter(
      estimator::make_input(Task::sentence, f, p.estimators.sentence.config().use_xlm));
}

std::vector<AblationRow> run_ablation(const RunConfig& c, const World& world, const Log& log) {
  auto tokenizer = train_tokenizer(c, world.parallel);
  say(log, "ablation: single-expert primal predictor");
  auto plain = train_predictor(c, tokenizer, world.parallel, 1, false, log);
  say(log, "ablation: mixture and dual predictor");
  auto mixture = train_predictor(c, tokenizer, world.parallel, c.nmt.experts, true, log);
  say(log, "ablation: xlm");
  auto xlm = train_xlm(c, tokenizer, world.parallel, log);

  std::vector<AblationRow> rows = {
      {"NMT", 1, false, false, false, {}, {}},
      {"+XLM", 1, false, true, false, {}, {}},
      {"+mixture&dual", c.nmt.experts, true, true, false, {}, {}},
      {"+f_dual", c.nmt.experts, true, true, true, {}, {}},
  };
  for (auto& row : rows) {
    say(log, "ablation row " + row.name);
    const auto& nmt = row.dual ? mixture : plain;
    const xlm::Xlm* xp = row.use_xlm ? &xlm : nullptr;
    auto train_f = extract_features(nmt, xp, tokenizer, world.qe.train, row.include_dual);
    auto dev_f = extract_features(nmt, xp, tokenizer, world.qe.dev, row.include_dual);
    auto test_f = extract_features(nmt, xp, tokenizer, world.qe.test, row.include_dual);
    auto est = train_estimators(c, {&train_f, &world.qe.train}, {&dev_f, &world.qe.dev}, row.use_xlm, log);
    row.dev = evaluate_estimators(est, dev_f, world.qe.dev, c.estimator.threshold);
    row.test = evaluate_estimators(est, test_f, world.qe.test, c.estimator.threshold);
  }
  return rows;
}

nlohmann::json to_json(const AblationRow& r) {
  return {{"name", r.name},   {"experts", r.experts},           {"dual", r.dual},
          {"use_xlm", r.use_xlm}, {"include_dual", r.include_dual}, {"dev", to_json(r.dev)},
          {"test", to_json(r.test)}};
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(16) << "system" << std::right << std::setw(10) << "pearson" << std::setw(10) << "mae"
    << std::setw(10) << "rmse" << std::setw(10) << "mcc" << std::setw(10) << "f1_bad" << std::setw(10) << "f1_ok"
    << "\n";
  for (const auto& r : rows) {
    s << std::left << std::setw(16) << r.name << std::right << std::setw(10) << fixed(r.test.sentence.pearson)
      << std::setw(10) << fixed(r.test.sentence.mae) << std::setw(10) << fixed(r.test.sentence.rmse) << std::setw(10)
      << fixed(r.test.tags.mcc) << std::setw(10) << fixed(r.test.tags.f1_bad) << std::setw(10)
      << fixed(r.test.tags.f1_ok) << "\n";
  }
  return s.str();
}

EnsembleReport run_ensemble(const RunConfig& c, const std::vector<SampleFeatures>& pool_features,
                            const std::vector<QESample>& pool_samples,
                            const std::vector<SampleFeatures>& test_features,
                            const std::vector<QESample>& test_samples, bool use_xlm, const Log& log) {
  const std::size_t n = pool_samples.size();
  if (pool_features.size() != n) throw std::invalid_argument("run_ensemble: feature/sample count mismatch");
  const auto fold = estimator::fold_assignment(n, c.ensemble.folds);
  const auto gold = gold_hter(pool_samples);
  const auto test_gold = gold_hter(test_samples);

  EnsembleReport report;
  report.members = c.ensemble.members;
  std::vector<std::vector<double>> columns, test_columns;
  for (std::size_t m = 0; m < c.ensemble.members; ++m) {
    RunConfig member = c;
    member.seed = derive_seed(c.seed, "ensemble-member-" + std::to_string(m));
    std::vector<double> oof(n, 0.0);
    for (std::size_t k = 0; k < c.ensemble.folds; ++k) {
      std::vector<SampleFeatures> tf, hf;
      std::vector<QESample> ts;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold[i] == k) {
          hf.push_back(pool_features[i]);
        } else {
          tf.push_back(pool_features[i]);
          ts.push_back(pool_samples[i]);
        }
      }
      say(log, "ensemble member " + std::to_string(m) + " fold " + std::to_string(k));
      auto model = train_task(member, Task::sentence, {&tf, &ts}, {}, use_xlm);
      auto p = predict_hter(model, hf);
      for (std::size_t i = 0, j = 0; i < n; ++i) {
        if (fold[i] == k) oof[i] = p[j++];
      }
    }
    say(log, "ensemble member " + std::to_string(m) + " full fit");
    auto full = train_task(member, Task::sentence, {&pool_features, &pool_samples}, {}, use_xlm);
    auto tp = predict_hter(full, test_features);
    report.member_test.push_back(safe_sentence_eval(test_gold, tp));
    columns.push_back(std::move(oof));
    test_columns.push_back(std::move(tp));
  }
  auto stack = estimator::stack_ensemble(columns, gold, c.ensemble.folds, c.ensemble.lambda);
  report.weights = stack.fit.weights;
  report.intercept = stack.fit.intercept;
  report.cv_mse = stack.cv_mse;
  std::vector<double> stacked;
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    std::vector<double> row;
    for (const auto& col : test_columns) row.push_back(col[i]);
    stacked.push_back(std::clamp(stack.fit.predict(row), 0.0, 1.0));
  }
  report.stacked_test = safe_sentence_eval(test_gold, stacked);
  return report;
}

nlohmann::json to_json(const EnsembleReport& r) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : r.member_test) members.push_back(eval::to_json(m));
  return {{"members", r.members},  {"member_test", members}, {"weights", r.weights},
          {"intercept", r.intercept}, {"cv_mse", r.cv_mse},    {"stacked_test", eval::to_json(r.stacked_test)}};
}

NoisyCorpus make_noisy_corpus(const RunConfig& c, const corpus::SyntheticLanguage& language) {
  corpus::ParallelConfig pc{c.filter.corpus_pairs, 1, c.data.min_length, c.data.max_length};
  NoisyCorpus out;
  out.pairs = corpus::gen_parallel(derive_seed(c.seed, "filter-corpus"), pc, language);
  pc.pairs = c.filter.dev_pairs;
  out.dev = corpus::gen_parallel(derive_seed(c.seed, "filter-dev"), pc, language);

  const std::size_t n = out.pairs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(c.seed, "filter-noise"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto noisy = static_cast<std::size_t>(std::floor(c.filter.noise_fraction * static_cast<double>(n)));
  out.corrupted.assign(n, false);
  const corpus::CorruptionRates rates{c.filter.noise_substitute, c.filter.noise_remove, c.filter.noise_insert};
  for (std::size_t j = 0; j < noisy; ++j) {
    const std::size_t i = order[j];
    out.pairs[i].target = corpus::corrupt(out.pairs[i].target, rates, corruption_pool(language), rng()).mt;
    out.corrupted[i] = true;
  }
  return out;
}

BleuCurve train_and_track_bleu(const RunConfig& c, const corpus::Tokenizer& tokenizer,
                               const std::vector<ParallelPair>& pairs, const std::vector<ParallelPair>& dev,
                               std::uint64_t seed) {
  auto mc = nmt_config(c, 1);
  mc.seed = derive_seed(seed, "filter-init");
  nmt::DualNmt model(mc, tokenizer.vocab().size());
  auto tc = nmt_train_config(c, c.nmt.dual);
  tc.steps = c.filter.nmt_steps;
  tc.seed = derive_seed(seed, "filter-train");
  tc.log_every = c.filter.eval_every;

  std::vector<nmt::TokenIds> sources;
  std::vector<corpus::Sentence> refs;
  for (const auto& p : dev) {
    sources.push_back(tokenizer.encode(p.source).ids);
    refs.push_back(p.target);
  }
  const std::size_t max_len = c.data.max_length * c.data.max_word_length + 2;
  BleuCurve curve;
  nmt::train_nmt(model, nmt::tokenize_pairs(tokenizer, pairs), tc, [&](const nmt::NmtTrainLog& l) {
    auto hyps = model.greedy_decode(nmt::Direction::primal, sources, 0, max_len);
    std::vector<corpus::Sentence> words;
    words.reserve(hyps.size());
    for (const auto& h : hyps) words.push_back(tokenizer.decode(h.tokens));
    curve.steps.push_back(l.step);
    curve.bleu.push_back(eval::corpus_bleu(words, refs));
  });
  auto sorted = curve.bleu;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t k = std::min(c.filter.best_k, sorted.size());
  if (k > 0) curve.best_k_mean = std::accumulate(sorted.begin(), sorted.begin() + k, 0.0) / static_cast<double>(k);
  return curve;
}

FilteringReport run_filtering_experiment(const RunConfig& c, const QePipeline& qe, const NoisyCorpus& corpus,
                                         const Log& log) {
  say(log, "filtering: scoring " + std::to_string(corpus.pairs.size()) + " pairs");
  auto filtered = eval::filter_corpus(
      corpus.pairs, [&](const ParallelPair& p) { return score_pair(qe, p.source, p.target, c); },
      c.filter.drop_fraction, &corpus.corrupted);
  std::vector<ParallelPair> kept;
  kept.reserve(filtered.kept.size());
  for (auto i : filtered.kept) kept.push_back(corpus.pairs[i]);
  say(log, "filtering: removed " + std::to_string(filtered.report.removed) + ", precision " +
               fixed(filtered.report.precision) + ", recall " + fixed(filtered.report.recall));

  FilteringReport report;
  report.filter = filtered.report;
  for (auto seed : c.filter.seeds) {
    FilteringRun run;
    run.seed = seed;
    run.unfiltered = train_and_track_bleu(c, qe.tokenizer, corpus.pairs, corpus.dev, seed);
    run.filtered = train_and_track_bleu(c, qe.tokenizer, kept, corpus.dev, seed);
    say(log, "filtering seed " + std::to_string(seed) + ": unfiltered " + fixed(run.unfiltered.best_k_mean) +
                 " filtered " + fixed(run.filtered.best_k_mean));
    if (run.filtered.best_k_mean >= run.unfiltered.best_k_mean) ++report.filtered_wins;
    report.runs.push_back(std::move(run));
  }
  return report;
}

nlohmann::json to_json(const FilteringReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"unfiltered", {{"steps", run.unfiltered.steps}, {"bleu", run.unfiltered.bleu},
                                    {"best_k_mean", run.unfiltered.best_k_mean}}},
                    {"filtered", {{"steps", run.filtered.steps}, {"bleu", run.filtered.bleu},
                                  {"best_k_mean", run.filtered.best_k_mean}}}});
  }
  return {{"filter", eval::to_json(r.filter)}, {"runs", runs}, {"filtered_wins", r.filtered_wins}};
}

}  // namespace qe::pipeline
