#include "qe/estimator/estimator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "qe/eval/metrics.hpp"
#include "qe/nn/checkpoint.hpp"

namespace qe::estimator {

using corpus::Tag;
using nn::Tensor;

std::string task_name(Task task) {
  switch (task) {
    case Task::sentence: return "sentence";
    case Task::word: return "word";
    case Task::gap: return "gap";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  if (name == "sentence") return Task::sentence;
  if (name == "word") return Task::word;
  if (name == "gap") return Task::gap;
  throw std::invalid_argument("unknown task '" + name + "' (expected sentence, word or gap)");
}

nn::PoolMode parse_pool_mode(const std::string& name) {
  if (name == "max") return nn::PoolMode::max;
  if (name == "mean_topk") return nn::PoolMode::mean_topk;
  throw std::invalid_argument("unknown pool mode '" + name + "' (expected max or mean_topk)");
}

std::string pool_mode_name(nn::PoolMode mode) { return mode == nn::PoolMode::max ? "max" : "mean_topk"; }

nlohmann::json to_json(const EstimatorConfig& c) {
  return {{"task", task_name(c.task)}, {"input_dim", c.input_dim}, {"hidden", c.hidden},
          {"head_hidden", c.head_hidden}, {"use_xlm", c.use_xlm},  {"topk", c.topk},
          {"pool", pool_mode_name(c.pool)}, {"w_nmt", c.w_nmt},     {"seed", c.seed}};
}

EstimatorConfig estimator_config_from_json(const nlohmann::json& j) {
  EstimatorConfig c;
  c.task = parse_task(j.at("task").get<std::string>());
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.use_xlm = j.at("use_xlm").get<bool>();
  c.topk = j.at("topk").get<std::size_t>();
  c.pool = parse_pool_mode(j.at("pool").get<std::string>());
  c.w_nmt = j.at("w_nmt").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

EstimatorInput make_input(Task task, const features::SampleFeatures& sample, bool use_xlm) {
  if (use_xlm && !sample.xlm) throw std::invalid_argument("make_input: sample has no XLM features");
  std::vector<const features::TokenFeatures*> sources = {&sample.nmt};
  if (use_xlm) sources.push_back(&*sample.xlm);
  EstimatorInput input;
  for (const auto* s : sources) {
    switch (task) {
      case Task::sentence: input.streams.push_back(s->matrix); break;
      case Task::word: input.streams.push_back(features::pool_words(*s)); break;
      case Task::gap: input.streams.push_back(features::gap_features(features::pool_words(*s))); break;
    }
  }
  return input;
}

std::vector<double> combine_streams(const std::vector<double>& p_nmt, const std::vector<double>& p_xlm,
                                    double w_nmt, double w_xlm) {
  if (p_nmt.size() != p_xlm.size()) throw std::invalid_argument("combine_streams: length mismatch");
  if (std::abs(w_nmt + w_xlm - 1.0) > 1e-12) throw std::invalid_argument("combine_streams: weights must sum to 1");
  std::vector<double> out(p_nmt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w_nmt * p_nmt[i] + w_xlm * p_xlm[i];
  return out;
}

template <typename T>
Estimator<T>::Estimator(const EstimatorConfig& config) : config_(config) {
  if (config.input_dim == 0 || config.hidden == 0 || config.head_hidden == 0 || config.topk == 0) {
    throw std::invalid_argument("estimator: dimensions and k must be positive");
  }
  if (config.w_nmt < 0.0 || config.w_nmt > 1.0) throw std::invalid_argument("estimator: w_nmt outside [0,1]");
  nn::Rng rng(config.seed);
  gru_ = nn::BiGru<T>::create(params_, "gru", config.input_dim, config.hidden, rng);
  const bool sentence = config.task == Task::sentence;
  const std::size_t head_in = sentence ? config.streams() * 2 * config.hidden : 2 * config.hidden;
  inner_ = nn::Linear<T>::create(params_, "head.inner", head_in, config.head_hidden, rng);
  outer_ = nn::Linear<T>::create(params_, "head.outer", config.head_hidden, sentence ? 1 : 2, rng);
  shift_ = params_.zeros("norm.shift", {config.input_dim});
  scale_ = params_.ones("norm.scale", {config.input_dim});
}

template <typename T>
std::vector<nn::Parameter<T>*> Estimator<T>::trainable() {
  return params_.select({"gru.", "head."});
}

template <typename T>
void Estimator<T>::fit_normalization(const std::vector<EstimatorInput>& inputs) {
  const std::size_t f = config_.input_dim;
  std::vector<double> sum(f, 0.0), sq(f, 0.0);
  std::size_t n = 0;
  for (const auto& in : inputs) {
    check_input(in);
    for (const auto& m : in.streams) {
      for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < f; ++c) {
          sum[c] += row[c];
          sq[c] += static_cast<double>(row[c]) * row[c];
        }
      }
      n += m.rows;
    }
  }
  if (n == 0) throw std::invalid_argument("fit_normalization: no rows");
  auto shift = shift_.mutable_values();
  auto scale = scale_.mutable_values();
  for (std::size_t c = 0; c < f; ++c) {
    const double mean = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);
    shift[c] = static_cast<T>(mean);
    scale[c] = static_cast<T>(sd > 1e-8 ? 1.0 / sd : 1.0);
  }
}

template <typename T>
void Estimator<T>::check_input(const EstimatorInput& input) const {
  if (input.streams.size() != config_.streams()) {
    throw std::invalid_argument("estimator: expected " + std::to_string(config_.streams()) + " streams, got " +
                                std::to_string(input.streams.size()));
  }
  for (const auto& m : input.streams) {
    if (m.cols != config_.input_dim) {
      throw std::invalid_argument("estimator: feature width " + std::to_string(m.cols) + ", expected " +
                                  std::to_string(config_.input_dim));
    }
    if (m.rows == 0) throw std::invalid_argument("estimator: empty feature stream");
  }
  if (input.streams.size() == 2 && config_.task != Task::sentence && input.streams[0].rows != input.streams[1].rows) {
    throw std::invalid_argument("estimator: streams disagree on row count");
  }
}

template <typename T>
Tensor<T> Estimator<T>::encode_stream(const FeatureMatrix& rows) const {
  const std::size_t f = config_.input_dim;
  auto shift = shift_.values();
  auto scale = scale_.values();
  std::vector<T> values(rows.rows * f);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    auto row = rows.row(r);
    for (std::size_t c = 0; c < f; ++c) values[r * f + c] = (static_cast<T>(row[c]) - shift[c]) * scale[c];
  }
  return nn::gru_bidirectional(Tensor<T>({rows.rows, f}, std::move(values)), gru_);
}

template <typename T>
Tensor<T> Estimator<T>::sentence_raw(const EstimatorInput& input) const {
  if (config_.task != Task::sentence) throw std::logic_error("sentence_raw on a " + task_name(config_.task) + " head");
  check_input(input);
  std::vector<Tensor<T>> pooled;
  for (const auto& m : input.streams) pooled.push_back(nn::topk_pool(encode_stream(m), config_.topk, config_.pool));
  auto joined = pooled.size() == 1 ? pooled[0] : nn::concat_cols(pooled);
  return outer_(nn::tanh(inner_(joined)));
}

template <typename T>
double Estimator<T>::predict_hter(const EstimatorInput& input) const {
  nn::NoGradGuard guard;
  return std::clamp(static_cast<double>(sentence_raw(input).item()), 0.0, 1.0);
}

template <typename T>
std::vector<Tensor<T>> Estimator<T>::tag_logits(const EstimatorInput& input) const {
  if (config_.task == Task::sentence) throw std::logic_error("tag_logits on a sentence head");
  check_input(input);
  std::vector<Tensor<T>> out;
  for (const auto& m : input.streams) out.push_back(outer_(nn::tanh(inner_(encode_stream(m)))));
  return out;
}

template <typename T>
TagProbabilities Estimator<T>::predict_tags(const EstimatorInput& input) const {
  nn::NoGradGuard guard;
  TagProbabilities out;
  for (const auto& logits : tag_logits(input)) {
    std::vector<double> p(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const double ok = logits.at(r, 0), bad = logits.at(r, 1);
      p[r] = 1.0 / (1.0 + std::exp(ok - bad));
    }
    out.per_stream.push_back(std::move(p));
  }
  out.blended = out.per_stream.size() == 1
                    ? out.per_stream[0]
                    : combine_streams(out.per_stream[0], out.per_stream[1], config_.w_nmt, 1.0 - config_.w_nmt);
  return out;
}

template <typename T>
Tensor<T> Estimator<T>::loss(const EstimatorInput& input, double hter, const std::vector<Tag>& tags,
                             double bad_weight) const {
  if (config_.task == Task::sentence) {
    auto diff = nn::sub(sentence_raw(input), Tensor<T>({1, 1}, {static_cast<T>(hter)}));
    return nn::mul(diff, diff);
  }
  std::vector<int> targets(tags.size());
  std::vector<T> weights(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    targets[i] = tags[i] == Tag::bad ? 1 : 0;
    weights[i] = static_cast<T>(tags[i] == Tag::bad ? bad_weight : 1.0);
  }
  Tensor<T> total;
  for (const auto& logits : tag_logits(input)) {
    if (logits.rows() != tags.size()) {
      throw std::invalid_argument("estimator: " + std::to_string(tags.size()) + " tags for " +
                                  std::to_string(logits.rows()) + " rows");
    }
    auto s = nn::sum(nn::cross_entropy_rows(logits, targets, weights));
    total = total.defined() ? nn::add(total, s) : s;
  }
  return total;
}

template class Estimator<float>;
template class Estimator<double>;

std::vector<Example> make_examples(Task task, const std::vector<features::SampleFeatures>& features,
                                   const std::vector<corpus::QESample>& samples, bool use_xlm) {
  if (features.size() != samples.size()) {
    throw std::invalid_argument("make_examples: " + std::to_string(features.size()) + " feature records for " +
                                std::to_string(samples.size()) + " samples");
  }
  std::vector<Example> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (features[i].nmt.words != samples[i].mt.size()) {
      throw std::invalid_argument("make_examples: sample " + std::to_string(i) + " word count mismatch");
    }
    Example e{make_input(task, features[i], use_xlm), samples[i].hter, {}};
    if (task == Task::word) e.tags = samples[i].word_tags;
    if (task == Task::gap) e.tags = samples[i].gap_tags;
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::json to_json(const EstimatorTrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"lr", c.lr},
          {"clip_norm", c.clip_norm},   {"beta1", c.beta1},           {"beta2", c.beta2},
          {"bad_weight", c.bad_weight}, {"threshold", c.threshold},
          {"seed", c.seed}};
}

std::vector<Tag> threshold_tags(const std::vector<double>& p_bad, double threshold) {
  std::vector<Tag> out(p_bad.size());
  for (std::size_t i = 0; i < p_bad.size(); ++i) out[i] = p_bad[i] >= threshold ? Tag::bad : Tag::ok;
  return out;
}

double dev_metric(const Estimator<float>& model, const std::vector<Example>& examples, double threshold) {
  if (model.config().task == Task::sentence) {
    std::vector<double> gold, pred;
    for (const auto& e : examples) {
      gold.push_back(e.hter);
      pred.push_back(model.predict_hter(e.input));
    }
    try {
      return eval::pearson(gold, pred);
    } catch (const std::invalid_argument&) {
      return 0.0;
    }
  }
  std::vector<Tag> gold, pred;
  for (const auto& e : examples) {
    auto tags = threshold_tags(model.predict_tags(e.input).blended, threshold);
    gold.insert(gold.end(), e.tags.begin(), e.tags.end());
    pred.insert(pred.end(), tags.begin(), tags.end());
  }
  return eval::mcc(gold, pred);
}

TrainReport train_estimator(Estimator<float>& model, const std::vector<Example>& train,
                            const std::vector<Example>& dev, const EstimatorTrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("train_estimator: empty training set");
  if (config.batch_size == 0) throw std::invalid_argument("train_estimator: batch size must be positive");
  const bool sentence = model.config().task == Task::sentence;
  nn::Adam<float> opt(model.trainable(), {config.lr, config.beta1, config.beta2, 1e-8, config.clip_norm});
  nn::Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  report.best_dev = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_units = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      nn::Tensor<float> total;
      std::size_t units = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train[order[i]];
        auto l = model.loss(ex.input, ex.hter, ex.tags, config.bad_weight);
        total = total.defined() ? nn::add(total, l) : l;
        units += sentence ? 1 : ex.tags.size() * model.config().streams();
      }
      epoch_loss += static_cast<double>(total.item());
      epoch_units += units;
      nn::scale(total, 1.0f / static_cast<float>(units)).backward();
      opt.step();
    }
    EpochLog log{epoch, epoch_loss / static_cast<double>(epoch_units), 0.0};
    log.dev_metric = dev.empty() ? 0.0 : dev_metric(model, dev, config.threshold);
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (dev.empty() || log.dev_metric > report.best_dev) {
      report.best_dev = log.dev_metric;
      report.best_epoch = epoch;
      best = model.params().snapshot();
    }
  }
  if (!best.empty()) model.params().restore(best);
  return report;
}

void save_estimator(const std::filesystem::path& dir, const Estimator<float>& model) {
  nn::save_checkpoint(dir, model.params(), {{"model", "estimator"}, {"config", to_json(model.config())}});
}

Estimator<float> load_estimator(const std::filesystem::path& dir, Task task) {
  auto meta = nn::read_checkpoint_meta(dir);
  if (meta.value("model", std::string()) != "estimator") {
    throw std::runtime_error("checkpoint at " + dir.string() + " is not an estimator");
  }
  auto config = estimator_config_from_json(meta.at("config"));
  const Task stored = config.task;
  config.task = task;
  Estimator<float> model(config);
  nn::load_checkpoint(dir, model.params());
  if (stored != task) {
    throw std::runtime_error("checkpoint holds a " + task_name(stored) + " estimator, expected " + task_name(task));
  }
  return model;
}

double RidgeFit::predict(const std::vector<double>& row) const {
  if (row.size() != weights.size()) throw std::invalid_argument("ridge predict: width mismatch");
  double y = intercept;
  for (std::size_t j = 0; j < row.size(); ++j) y += weights[j] * row[j];
  return y;
}

RidgeFit ridge_fit(const std::vector<std::vector<double>>& rows, const std::vector<double>& y, double lambda) {
  if (rows.empty() || rows.size() != y.size()) throw std::invalid_argument("ridge_fit: bad design size");
  const std::size_t n = rows.size(), m = rows[0].size();
  Eigen::MatrixXd X(n, m);
  Eigen::VectorXd Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != m) throw std::invalid_argument("ridge_fit: ragged design");
    for (std::size_t j = 0; j < m; ++j) X(i, j) = rows[i][j];
    Y(i) = y[i];
  }
  // Centering removes the intercept from the penalized system.
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const double my = Y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mx;
  const Eigen::VectorXd Yc = Y.array() - my;
  Eigen::MatrixXd A = Xc.transpose() * Xc;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd w = A.ldlt().solve(Xc.transpose() * Yc);
  RidgeFit fit;
  fit.weights.assign(w.data(), w.data() + m);
  fit.intercept = my - mx.dot(w);
  return fit;
}

std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds) {
  if (folds < 2) throw std::invalid_argument("fold_assignment: need at least 2 folds");
  if (n < folds) throw std::invalid_argument("fold_assignment: fewer samples than folds");
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i * folds / n;
  return out;
}

StackResult stack_ensemble(const std::vector<std::vector<double>>& columns, const std::vector<double>& labels,
                           std::size_t folds, double lambda) {
  if (columns.empty()) throw std::invalid_argument("stack_ensemble: no systems");
  const std::size_t n = labels.size();
  for (const auto& c : columns) {
    if (c.size() != n) throw std::invalid_argument("stack_ensemble: column length mismatch");
  }
  const auto fold = fold_assignment(n, folds);
  std::vector<std::vector<double>> rows(n, std::vector<double>(columns.size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < columns.size(); ++m) rows[i][m] = columns[m][i];
  }
  StackResult result;
  result.cv_predictions.resize(n);
  double sq = 0.0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] == f) continue;
      x.push_back(rows[i]);
      y.push_back(labels[i]);
    }
    auto fit = ridge_fit(x, y, lambda);
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] != f) continue;
      result.cv_predictions[i] = fit.predict(rows[i]);
      const double e = result.cv_predictions[i] - labels[i];
      sq += e * e;
    }
  }
  result.cv_mse = sq / static_cast<double>(n);
  result.fit = ridge_fit(rows, labels, lambda);
  return result;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(9);
  return out;
}

std::vector<std::string> tsv_rows(const std::filesystem::path& path, const std::string& header) {
  auto lines = corpus::read_lines(path);
  if (lines.empty() || lines[0] != header) throw std::runtime_error(path.string() + ": missing header '" + header + "'");
  lines.erase(lines.begin());
  return lines;
}

}  // namespace

void write_sentence_predictions(const std::filesystem::path& path, const std::vector<double>& hter) {
  auto out = open_out(path);
  out << "sentence_id\thter_hat\n";
  for (std::size_t i = 0; i < hter.size(); ++i) out << i << '\t' << hter[i] << '\n';
}

std::vector<double> read_sentence_predictions(const std::filesystem::path& path) {
  std::vector<double> out;
  auto lines = tsv_rows(path, "sentence_id\thter_hat");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::istringstream in(lines[i]);
    std::size_t id = 0;
    double v = 0.0;
    if (!(in >> id >> v) || id != out.size()) {
      throw std::runtime_error(path.string() + ": bad row at line " + std::to_string(i + 2));
    }
    out.push_back(v);
  }
  return out;
}

void write_tag_predictions(const std::filesystem::path& path, const std::vector<TagRow>& rows) {
  auto out = open_out(path);
  out << "sentence_id\tposition\tkind\tp_bad\ttag\n";
  for (const auto& r : rows) {
    out << r.sentence << '\t' << r.position << '\t' << (r.gap ? "gap" : "word") << '\t' << r.p_bad << '\t'
        << corpus::tag_name(r.tag) << '\n';
  }
}

std::vector<TagRow> read_tag_predictions(const std::filesystem::path& path) {
  std::vector<TagRow> out;
  auto lines = tsv_rows(path, "sentence_id\tposition\tkind\tp_bad\ttag");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::istringstream in(lines[i]);
    TagRow r;
    std::string kind, tag;
    if (!(in >> r.sentence >> r.position >> kind >> r.p_bad >> tag) || (kind != "word" && kind != "gap")) {
      throw std::runtime_error(path.string() + ": bad row at line " + std::to_string(i + 2));
    }
    r.gap = kind == "gap";
    r.tag = corpus::parse_tag(tag);
    out.push_back(r);
  }
  return out;
}

}  // namespace qe::estimator
