#include "qe/pipeline/config.hpp"

#include <fstream>
#include <stdexcept>

namespace qe::pipeline {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataSection, words_per_side, min_word_length, max_word_length, parallel_pairs,
                                   styles, min_length, max_length, qe_samples, substitute, remove, insert,
                                   vary_severity, train_fraction, dev_fraction, bpe_merges)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NmtSection, model_dim, heads, layers, ff_dim, experts, steps, batch_size, lr,
                                   warmup, clip_norm, dual)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(XlmSection, model_dim, heads, layers, ff_dim, steps, batch_size, lr, warmup,
                                   clip_norm, tlm_mix, select_rate)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(OptimSection, beta1, beta2)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FeatureSection, use_xlm, include_dual)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EstimatorSection, hidden, head_hidden, topk, pool, w_nmt, epochs, batch_size, lr,
                                   clip_norm, bad_weight, threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnsembleSection, members, folds, lambda)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FilterSection, drop_fraction, noise_fraction, noise_substitute, noise_remove,
                                   noise_insert, corpus_pairs, dev_pairs, nmt_steps, eval_every, best_k, seeds)

namespace {

bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number_float()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) return false;
    }
    return true;
  }
  return def.is_object() && v.is_object();
}

void merge_strict(nlohmann::json& base, const nlohmann::json& over, const std::string& path) {
  if (!over.is_object()) throw std::invalid_argument("config: " + (path.empty() ? "root" : path) + " must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("config: unknown key '" + key + "'");
    auto& slot = base[it.key()];
    if (!same_kind(slot, it.value())) {
      throw std::invalid_argument("config: '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                                  it.value().dump());
    }
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("config: " + message);
}

}  // namespace

void RunConfig::validate() const {
  require(data.words_per_side >= 2, "data.words_per_side must be >= 2");
  require(data.min_word_length >= 1 && data.min_word_length <= data.max_word_length, "data word lengths invalid");
  require(data.min_length >= 1 && data.min_length <= data.max_length, "data sentence lengths invalid");
  require(data.styles >= 1 && data.styles <= data.words_per_side, "data.styles must be in [1, words_per_side]");
  require(data.parallel_pairs > 0 && data.qe_samples > 0, "data sizes must be positive");
  require(data.train_fraction > 0 && data.dev_fraction >= 0 && data.train_fraction + data.dev_fraction < 1.0,
          "data split fractions invalid");
  require(nmt.experts >= 1, "nmt.experts must be >= 1");
  require(nmt.model_dim % nmt.heads == 0, "nmt.model_dim must be divisible by nmt.heads");
  require(xlm.model_dim % xlm.heads == 0, "xlm.model_dim must be divisible by xlm.heads");
  require(!features.use_xlm || xlm.model_dim == nmt.model_dim,
          "xlm.model_dim must equal nmt.model_dim when features.use_xlm is set (stream widths must match)");
  require(estimator.w_nmt >= 0.0 && estimator.w_nmt <= 1.0, "estimator.w_nmt must be in [0,1]");
  require(estimator.topk >= 1, "estimator.topk must be >= 1");
  require(estimator.pool == "max" || estimator.pool == "mean_topk", "estimator.pool must be max or mean_topk");
  require(ensemble.folds >= 2 && ensemble.members >= 1, "ensemble needs folds >= 2 and members >= 1");
  require(filter.drop_fraction >= 0.0 && filter.drop_fraction < 1.0, "filter.drop_fraction must be in [0,1)");
  require(filter.noise_fraction >= 0.0 && filter.noise_fraction <= 1.0, "filter.noise_fraction must be in [0,1]");
  require(filter.eval_every >= 1 && filter.best_k >= 1, "filter.eval_every and filter.best_k must be >= 1");
  require(!filter.seeds.empty(), "filter.seeds must not be empty");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},         {"data", c.data},           {"nmt", c.nmt},
          {"xlm", c.xlm},           {"optim", c.optim},         {"features", c.features},
          {"estimator", c.estimator}, {"ensemble", c.ensemble}, {"filter", c.filter}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  auto merged = to_json(RunConfig{});
  merge_strict(merged, j, "");
  RunConfig c;
  c.seed = merged.at("seed").get<std::uint64_t>();
  c.data = merged.at("data").get<DataSection>();
  c.nmt = merged.at("nmt").get<NmtSection>();
  c.xlm = merged.at("xlm").get<XlmSection>();
  c.optim = merged.at("optim").get<OptimSection>();
  c.features = merged.at("features").get<FeatureSection>();
  c.estimator = merged.at("estimator").get<EstimatorSection>();
  c.ensemble = merged.at("ensemble").get<EnsembleSection>();
  c.filter = merged.at("filter").get<FilterSection>();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  auto merged = to_json(c);
  merge_strict(merged, patch, "");
  c = run_config_from_json(merged);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  // splitmix64 finalizer
  std::uint64_t z = master ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

corpus::LanguageConfig language_config(const RunConfig& c) {
  return {c.data.words_per_side, c.data.min_word_length, c.data.max_word_length, derive_seed(c.seed, "language")};
}

corpus::CorruptionConfig corruption_config(const RunConfig& c) {
  corpus::CorruptionConfig k;
  k.rates = {c.data.substitute, c.data.remove, c.data.insert};
  k.vary_severity = c.data.vary_severity;
  k.train_fraction = c.data.train_fraction;
  k.dev_fraction = c.data.dev_fraction;
  return k;
}

nmt::NmtConfig nmt_config(const RunConfig& c, std::size_t experts) {
  nmt::NmtConfig k;
  k.model_dim = c.nmt.model_dim;
  k.heads = c.nmt.heads;
  k.layers = c.nmt.layers;
  k.ff_dim = c.nmt.ff_dim;
  k.experts = experts;
  k.max_positions = 2 * c.data.max_length * c.data.max_word_length + 8;
  k.seed = derive_seed(c.seed, "nmt-init");
  return k;
}

nmt::NmtTrainConfig nmt_train_config(const RunConfig& c, bool dual) {
  nmt::NmtTrainConfig k;
  k.steps = c.nmt.steps;
  k.batch_size = c.nmt.batch_size;
  k.lr = c.nmt.lr;
  k.warmup = c.nmt.warmup;
  k.clip_norm = c.nmt.clip_norm;
  k.beta1 = c.optim.beta1;
  k.beta2 = c.optim.beta2;
  k.dual = dual;
  k.seed = derive_seed(c.seed, "nmt-train");
  return k;
}

xlm::XlmConfig xlm_config(const RunConfig& c) {
  xlm::XlmConfig k;
  k.model_dim = c.xlm.model_dim;
  k.heads = c.xlm.heads;
  k.layers = c.xlm.layers;
  k.ff_dim = c.xlm.ff_dim;
  k.max_positions = 2 * c.data.max_length * c.data.max_word_length + 8;
  k.seed = derive_seed(c.seed, "xlm-init");
  return k;
}

xlm::XlmTrainConfig xlm_train_config(const RunConfig& c) {
  xlm::XlmTrainConfig k;
  k.steps = c.xlm.steps;
  k.batch_size = c.xlm.batch_size;
  k.lr = c.xlm.lr;
  k.warmup = c.xlm.warmup;
  k.clip_norm = c.xlm.clip_norm;
  k.beta1 = c.optim.beta1;
  k.beta2 = c.optim.beta2;
  k.tlm_mix = c.xlm.tlm_mix;
  k.mask.select_rate = c.xlm.select_rate;
  k.seed = derive_seed(c.seed, "xlm-train");
  return k;
}

estimator::EstimatorConfig estimator_config(const RunConfig& c, estimator::Task task, std::size_t input_dim,
                                            bool use_xlm) {
  estimator::EstimatorConfig k;
  k.task = task;
  k.input_dim = input_dim;
  k.hidden = c.estimator.hidden;
  k.head_hidden = c.estimator.head_hidden;
  k.use_xlm = use_xlm;
  k.topk = c.estimator.topk;
  k.pool = estimator::parse_pool_mode(c.estimator.pool);
  k.w_nmt = c.estimator.w_nmt;
  k.seed = derive_seed(c.seed, "estimator-init-" + estimator::task_name(task));
  return k;
}

estimator::EstimatorTrainConfig estimator_train_config(const RunConfig& c, estimator::Task task) {
  estimator::EstimatorTrainConfig k;
  k.epochs = c.estimator.epochs;
  k.batch_size = c.estimator.batch_size;
  k.lr = c.estimator.lr;
  k.clip_norm = c.estimator.clip_norm;
  k.beta1 = c.optim.beta1;
  k.beta2 = c.optim.beta2;
  k.bad_weight = c.estimator.bad_weight;
  k.threshold = c.estimator.threshold;
  k.seed = derive_seed(c.seed, "estimator-train-" + estimator::task_name(task));
  return k;
}

}  // namespace qe::pipeline
