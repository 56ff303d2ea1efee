#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qe/corpus/qe_data.hpp"
#include "qe/features/features.hpp"
#include "qe/nn/layers.hpp"
#include "qe/nn/optim.hpp"

namespace qe::estimator {

using features::FeatureMatrix;

enum class Task { sentence, word, gap };
std::string task_name(Task task);
Task parse_task(const std::string& name);

nn::PoolMode parse_pool_mode(const std::string& name);
std::string pool_mode_name(nn::PoolMode mode);

struct EstimatorConfig {
  Task task = Task::sentence;
  std::size_t input_dim = 0;
  std::size_t hidden = 32;       // per GRU direction
  std::size_t head_hidden = 32;
  bool use_xlm = true;
  std::size_t topk = 3;
  nn::PoolMode pool = nn::PoolMode::mean_topk;
  double w_nmt = 0.8;            // w_xlm = 1 - w_nmt
  std::uint64_t seed = 4;

  std::size_t streams() const { return use_xlm ? 2 : 1; }
};
nlohmann::json to_json(const EstimatorConfig& c);
EstimatorConfig estimator_config_from_json(const nlohmann::json& j);

// Stream 0 is NMT, stream 1 (optional) is XLM. Rows are subword tokens for
// the sentence task, words for the word task and gaps for the gap task.
struct EstimatorInput {
  std::vector<FeatureMatrix> streams;
};
EstimatorInput make_input(Task task, const features::SampleFeatures& sample, bool use_xlm);

// Convex blend of two BAD-probability vectors. Throws when the lengths
// differ or the weights do not sum to 1.
std::vector<double> combine_streams(const std::vector<double>& p_nmt, const std::vector<double>& p_xlm,
                                    double w_nmt = 0.8, double w_xlm = 0.2);

struct TagProbabilities {
  std::vector<std::vector<double>> per_stream;  // p(BAD) per row
  std::vector<double> blended;
};

// One Bi-GRU shared by every stream plus a single task head:
//   sentence: topk_pool per stream, concat, Linear-tanh-Linear -> 1
//   word/gap: per row Linear-tanh-Linear -> {OK, BAD} logits
// Inputs are standardized with a fixed per-column shift and scale.
template <typename T>
class Estimator {
 public:
  explicit Estimator(const EstimatorConfig& config);

  const EstimatorConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  const nn::BiGru<T>& gru() const { return gru_; }
  // Parameters touched by the optimizer (everything but the standardizer).
  std::vector<nn::Parameter<T>*> trainable();

  void fit_normalization(const std::vector<EstimatorInput>& inputs);

  nn::Tensor<T> encode_stream(const FeatureMatrix& rows) const;  // [rows x 2h]
  nn::Tensor<T> sentence_raw(const EstimatorInput& input) const;  // [1 x 1], unclamped
  double predict_hter(const EstimatorInput& input) const;         // clamped to [0,1]
  std::vector<nn::Tensor<T>> tag_logits(const EstimatorInput& input) const;  // per stream [rows x 2]
  TagProbabilities predict_tags(const EstimatorInput& input) const;

  // Sentence: squared error of the raw output. Tags: cross-entropy summed
  // over rows and streams, BAD rows weighted by bad_weight.
  nn::Tensor<T> loss(const EstimatorInput& input, double hter, const std::vector<corpus::Tag>& tags,
                     double bad_weight) const;

 private:
  void check_input(const EstimatorInput& input) const;

  EstimatorConfig config_;
  nn::ParameterSet<T> params_;
  nn::BiGru<T> gru_;
  nn::Linear<T> inner_, outer_;
  nn::Tensor<T> shift_, scale_;
};

extern template class Estimator<float>;
extern template class Estimator<double>;

struct Example {
  EstimatorInput input;
  double hter = 0.0;
  std::vector<corpus::Tag> tags;  // word or gap tags, empty for the sentence task
};
std::vector<Example> make_examples(Task task, const std::vector<features::SampleFeatures>& features,
                                   const std::vector<corpus::QESample>& samples, bool use_xlm);

struct EstimatorTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double bad_weight = 1.0;
  double threshold = 0.5;
  std::uint64_t seed = 5;
};
nlohmann::json to_json(const EstimatorTrainConfig& c);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;  // Pearson (sentence) or MCC (tags)
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_dev = 0.0;
};

// Restores the parameters of the best dev epoch before returning. With an
// empty dev set the last epoch is kept.
TrainReport train_estimator(Estimator<float>& model, const std::vector<Example>& train,
                            const std::vector<Example>& dev, const EstimatorTrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

// Pearson for the sentence task (0 when undefined), MCC at `threshold` for tags.
double dev_metric(const Estimator<float>& model, const std::vector<Example>& examples, double threshold = 0.5);

std::vector<corpus::Tag> threshold_tags(const std::vector<double>& p_bad, double threshold = 0.5);

void save_estimator(const std::filesystem::path& dir, const Estimator<float>& model);
// Builds an estimator for `task` from the stored config and loads it; a
// checkpoint of another task fails on head shapes or on the recorded task.
Estimator<float> load_estimator(const std::filesystem::path& dir, Task task);

// Ridge fit y ~ X w + b with an unpenalized intercept.
struct RidgeFit {
  std::vector<double> weights;
  double intercept = 0.0;
  double predict(const std::vector<double>& row) const;
};
RidgeFit ridge_fit(const std::vector<std::vector<double>>& rows, const std::vector<double>& y, double lambda);

struct StackResult {
  RidgeFit fit;           // trained on every row
  double cv_mse = 0.0;    // k-fold error of the second-level regressor
  std::vector<double> cv_predictions;
};

// `columns[m][i]` is system m's out-of-fold prediction for sample i.
StackResult stack_ensemble(const std::vector<std::vector<double>>& columns, const std::vector<double>& labels,
                           std::size_t folds = 5, double lambda = 1e-6);

// Contiguous fold id of each of n samples.
std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds);

void write_sentence_predictions(const std::filesystem::path& path, const std::vector<double>& hter);
std::vector<double> read_sentence_predictions(const std::filesystem::path& path);

struct TagRow {
  std::size_t sentence = 0;
  std::size_t position = 0;
  bool gap = false;
  double p_bad = 0.0;
  corpus::Tag tag = corpus::Tag::ok;
};
void write_tag_predictions(const std::filesystem::path& path, const std::vector<TagRow>& rows);
std::vector<TagRow> read_tag_predictions(const std::filesystem::path& path);

}  // namespace qe::estimator
