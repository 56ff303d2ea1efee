#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qe/corpus/bpe.hpp"
#include "qe/corpus/qe_data.hpp"
#include "qe/estimator/estimator.hpp"
#include "qe/eval/filter.hpp"
#include "qe/eval/metrics.hpp"
#include "qe/features/features.hpp"
#include "qe/nmt/dual_nmt.hpp"
#include "qe/pipeline/config.hpp"
#include "qe/xlm/xlm.hpp"

namespace qe::pipeline {

using Log = std::function<void(const std::string&)>;

// Synthetic language, the predictor's parallel corpus and a QE dataset built
// from a disjoint set of pairs.
struct World {
  corpus::SyntheticLanguage language;
  std::vector<corpus::ParallelPair> parallel;
  corpus::QEDataset qe;
};
World make_world(const RunConfig& c);

// Words that corruption may insert or substitute.
const corpus::Sentence& corruption_pool(const corpus::SyntheticLanguage& language);

corpus::Tokenizer train_tokenizer(const RunConfig& c, const std::vector<corpus::ParallelPair>& pairs);

nmt::DualNmt train_predictor(const RunConfig& c, const corpus::Tokenizer& tokenizer,
                             const std::vector<corpus::ParallelPair>& pairs, std::size_t experts, bool dual,
                             const Log& log = {});
xlm::Xlm train_xlm(const RunConfig& c, const corpus::Tokenizer& tokenizer,
                   const std::vector<corpus::ParallelPair>& pairs, const Log& log = {});

// The XLM stream is tiled to the predictor's expert count so both streams
// share one width.
features::SampleFeatures sample_features(const nmt::DualNmt& nmt, const xlm::Xlm* xlm,
                                         const corpus::Tokenizer& tokenizer, const corpus::Sentence& source,
                                         const corpus::Sentence& mt, bool include_dual);
std::vector<features::SampleFeatures> extract_features(const nmt::DualNmt& nmt, const xlm::Xlm* xlm,
                                                       const corpus::Tokenizer& tokenizer,
                                                       const std::vector<corpus::QESample>& samples,
                                                       bool include_dual);

struct TaskData {
  const std::vector<features::SampleFeatures>* features = nullptr;
  const std::vector<corpus::QESample>* samples = nullptr;
};

estimator::Estimator<float> train_task(const RunConfig& c, estimator::Task task, const TaskData& train,
                                       const TaskData& dev, bool use_xlm, estimator::TrainReport* report = nullptr,
                                       const Log& log = {});

std::vector<double> predict_hter(const estimator::Estimator<float>& model,
                                 const std::vector<features::SampleFeatures>& features);
// Blended p(BAD) per word or gap of every sample.
std::vector<std::vector<double>> predict_tag_probs(const estimator::Estimator<float>& model,
                                                   const std::vector<features::SampleFeatures>& features);
std::vector<eval::TagPrediction> combine_tag_predictions(const std::vector<std::vector<double>>& word_probs,
                                                         const std::vector<std::vector<double>>& gap_probs,
                                                         double threshold);

struct QeEstimators {
  estimator::Estimator<float> sentence;
  estimator::Estimator<float> word;
  estimator::Estimator<float> gap;
};

struct QeEvaluation {
  eval::SentenceEvalReport sentence;
  eval::WordEvalReport tags;
};
nlohmann::json to_json(const QeEvaluation& e);

QeEstimators train_estimators(const RunConfig& c, const TaskData& train, const TaskData& dev, bool use_xlm,
                              const Log& log = {});
QeEvaluation evaluate_estimators(const QeEstimators& models, const std::vector<features::SampleFeatures>& features,
                                 const std::vector<corpus::QESample>& samples, double threshold);

// Everything needed to score a (source, mt) pair.
struct QePipeline {
  corpus::Tokenizer tokenizer;
  nmt::DualNmt nmt;
  std::optional<xlm::Xlm> xlm;
  QeEstimators estimators;
  QeEvaluation dev;
};

QePipeline train_pipeline(const RunConfig& c, const World& world, const Log& log = {});
double score_pair(const QePipeline& p, const corpus::Sentence& source, const corpus::Sentence& mt,
                  const RunConfig& c);

struct AblationRow {
  std::string name;
  std::size_t experts = 1;
  bool dual = false;
  bool use_xlm = false;
  bool include_dual = false;
  QeEvaluation dev;
  QeEvaluation test;
};
// NMT -> +XLM -> +mixture & dual learning -> +f_dual.
std::vector<AblationRow> run_ablation(const RunConfig& c, const World& world, const Log& log = {});
nlohmann::json to_json(const AblationRow& r);
std::string ablation_table(const std::vector<AblationRow>& rows);

struct EnsembleReport {
  std::size_t members = 0;
  std::vector<eval::SentenceEvalReport> member_test;
  std::vector<double> weights;
  double intercept = 0.0;
  double cv_mse = 0.0;
  eval::SentenceEvalReport stacked_test;
};
// Members differ in their estimator seed. Out-of-fold predictions on
// train+dev feed the ridge stacker, which is scored on test.
EnsembleReport run_ensemble(const RunConfig& c, const std::vector<features::SampleFeatures>& pool_features,
                            const std::vector<corpus::QESample>& pool_samples,
                            const std::vector<features::SampleFeatures>& test_features,
                            const std::vector<corpus::QESample>& test_samples, bool use_xlm, const Log& log = {});
nlohmann::json to_json(const EnsembleReport& r);

// A single-style corpus with noise_fraction of targets heavily corrupted.
struct NoisyCorpus {
  std::vector<corpus::ParallelPair> pairs;
  std::vector<bool> corrupted;
  std::vector<corpus::ParallelPair> dev;
};
NoisyCorpus make_noisy_corpus(const RunConfig& c, const corpus::SyntheticLanguage& language);

struct BleuCurve {
  std::vector<std::size_t> steps;
  std::vector<double> bleu;
  double best_k_mean = 0.0;
};

// Trains a single-expert predictor on `pairs` and tracks dev BLEU of greedy
// primal decoding every eval_every steps.
BleuCurve train_and_track_bleu(const RunConfig& c, const corpus::Tokenizer& tokenizer,
                               const std::vector<corpus::ParallelPair>& pairs,
                               const std::vector<corpus::ParallelPair>& dev, std::uint64_t seed);

struct FilteringRun {
  std::uint64_t seed = 0;
  BleuCurve unfiltered;
  BleuCurve filtered;
};
struct FilteringReport {
  eval::FilterReport filter;
  std::vector<FilteringRun> runs;
  std::size_t filtered_wins = 0;  // seeds with filtered >= unfiltered
};
FilteringReport run_filtering_experiment(const RunConfig& c, const QePipeline& qe, const NoisyCorpus& corpus,
                                         const Log& log = {});
nlohmann::json to_json(const FilteringReport& r);

}  // namespace qe::pipeline
