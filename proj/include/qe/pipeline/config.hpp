#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qe/corpus/qe_data.hpp"
#include "qe/corpus/synthetic.hpp"
#include "qe/estimator/estimator.hpp"
#include "qe/nmt/dual_nmt.hpp"
#include "qe/xlm/xlm.hpp"

namespace qe::pipeline {

struct DataSection {
  std::size_t words_per_side = 24;
  std::size_t min_word_length = 2;
  std::size_t max_word_length = 4;
  std::size_t parallel_pairs = 2000;  // predictor training corpus
  std::size_t styles = 3;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
  std::size_t qe_samples = 2000;
  double substitute = 0.15;
  double remove = 0.05;
  double insert = 0.05;
  bool vary_severity = true;
  double train_fraction = 0.7;
  double dev_fraction = 0.15;
  std::size_t bpe_merges = 200;
};

struct NmtSection {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 128;
  std::size_t experts = 3;
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t warmup = 100;
  double clip_norm = 1.0;
  bool dual = true;
};

struct XlmSection {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_dim = 128;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t warmup = 100;
  double clip_norm = 1.0;
  double tlm_mix = 0.5;
  double select_rate = 0.15;
};

struct OptimSection {
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct FeatureSection {
  bool use_xlm = true;
  bool include_dual = true;
};

struct EstimatorSection {
  std::size_t hidden = 32;
  std::size_t head_hidden = 32;
  std::size_t topk = 3;
  std::string pool = "mean_topk";
  double w_nmt = 0.8;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double bad_weight = 1.0;
  double threshold = 0.5;
};

struct EnsembleSection {
  std::size_t members = 3;
  std::size_t folds = 5;
  double lambda = 1e-6;
};

struct FilterSection {
  double drop_fraction = 0.2;
  double noise_fraction = 0.2;
  double noise_substitute = 0.5;
  double noise_remove = 0.1;
  double noise_insert = 0.1;
  std::size_t corpus_pairs = 2000;
  std::size_t dev_pairs = 200;
  std::size_t nmt_steps = 1000;
  std::size_t eval_every = 100;
  std::size_t best_k = 3;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

// Every field has a default; unknown keys and mistyped values are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  DataSection data;
  NmtSection nmt;
  XlmSection xlm;
  OptimSection optim;
  FeatureSection features;
  EstimatorSection estimator;
  EnsembleSection ensemble;
  FilterSection filter;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
// "section.key=value" with value parsed as JSON, else taken as a string.
void apply_override(RunConfig& c, const std::string& assignment);

// Independent stream seed for one named component.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

corpus::LanguageConfig language_config(const RunConfig& c);
corpus::CorruptionConfig corruption_config(const RunConfig& c);
nmt::NmtConfig nmt_config(const RunConfig& c, std::size_t experts);
nmt::NmtTrainConfig nmt_train_config(const RunConfig& c, bool dual);
xlm::XlmConfig xlm_config(const RunConfig& c);
xlm::XlmTrainConfig xlm_train_config(const RunConfig& c);
estimator::EstimatorConfig estimator_config(const RunConfig& c, estimator::Task task, std::size_t input_dim,
                                            bool use_xlm);
estimator::EstimatorTrainConfig estimator_train_config(const RunConfig& c, estimator::Task task);

}  // namespace qe::pipeline
