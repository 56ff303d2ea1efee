// Command-line driver for the QE pipeline. Every subcommand writes into a
// fresh --out directory: config.json (resolved config), provenance.json and,
// where it evaluates something, a deterministic metrics.json.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qe/nn/checkpoint.hpp"
#include "qe/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qe;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_path(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error(what + " not found at " + p.string());
}

// One subcommand execution: resolves the config, owns the output directory
// and leaves an INCOMPLETE marker behind when the body throws.
class Run {
 public:
  Run(const Common& common, std::string command) : common_(common), command_(std::move(command)) {
    if (!common.config_path.empty()) config_ = pipeline::load_run_config(common.config_path);
    if (common.seed) config_.seed = *common.seed;
    for (const auto& o : common.overrides) pipeline::apply_override(config_, o);
    config_.validate();
    if (common.out.empty()) throw std::runtime_error("--out is required");
    out_ = common.out;
    if (fs::exists(out_) && !fs::is_empty(out_)) {
      if (!common.force) throw std::runtime_error("output directory " + out_.string() + " is not empty (use --force)");
      fs::remove_all(out_);
    }
    fs::create_directories(out_);
    std::ofstream(out_ / "INCOMPLETE") << command_ << '\n';
    write_json(out_ / "config.json", pipeline::to_json(config_));
    start_ = std::chrono::steady_clock::now();
  }

  const pipeline::RunConfig& config() const { return config_; }
  const fs::path& out() const { return out_; }
  pipeline::Log log() const {
    if (common_.quiet) return {};
    return [cmd = command_](const std::string& line) { std::cerr << "[" << cmd << "] " << line << std::endl; };
  }

  void finish(const json& inputs = json::object()) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json(out_ / "provenance.json", {{"command", command_},
                                          {"version", kVersion},
                                          {"seed", config_.seed},
                                          {"inputs", inputs},
                                          {"wall_seconds", seconds}});
    fs::remove(out_ / "INCOMPLETE");
  }

 private:
  Common common_;
  std::string command_;
  pipeline::RunConfig config_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<corpus::QESample> load_split(const fs::path& data, const std::string& split) {
  const fs::path dir = data / "qe" / split;
  require_path(dir, "QE split '" + split + "'");
  return corpus::load_qe_files(dir);
}

struct Predictors {
  corpus::Tokenizer tokenizer;
  nmt::DualNmt nmt;
  std::optional<xlm::Xlm> xlm;
};

corpus::Tokenizer load_tokenizer_dir(const fs::path& dir) {
  require_path(dir / "merges.txt", "tokenizer");
  return corpus::load_tokenizer(dir);
}

Predictors load_predictors(const fs::path& nmt_dir, const std::string& xlm_dir) {
  auto tok = load_tokenizer_dir(nmt_dir / "tokenizer");
  auto model = nmt::load_nmt(nmt_dir / "model", tok.vocab().hash());
  std::optional<xlm::Xlm> xlm;
  if (!xlm_dir.empty()) xlm.emplace(xlm::load_xlm(fs::path(xlm_dir) / "model", tok.vocab().hash()));
  return {std::move(tok), std::move(model), std::move(xlm)};
}

std::vector<std::uint8_t> read_flags(const fs::path& file, std::size_t n) {
  auto lines = corpus::read_lines(file);
  if (lines.size() != n) throw std::runtime_error(file.string() + ": expected " + std::to_string(n) + " lines");
  std::vector<std::uint8_t> out;
  for (const auto& l : lines) out.push_back(l == "1" ? 1 : 0);
  return out;
}

void write_noisy(const fs::path& dir, const pipeline::NoisyCorpus& c) {
  corpus::save_parallel(dir / "train", c.pairs);
  corpus::save_parallel(dir / "dev", c.dev);
  std::ofstream flags(dir / "train" / "corrupted.txt", std::ios::binary);
  for (bool b : c.corrupted) flags << (b ? 1 : 0) << '\n';
}

// ---- subcommands ----

void cmd_gen_data(const Common& common) {
  Run run(common, "gen-data");
  const auto& c = run.config();
  auto world = pipeline::make_world(c);
  corpus::save_parallel(run.out() / "parallel", world.parallel);
  corpus::save_qe_files(run.out() / "qe" / "train", world.qe.train);
  corpus::save_qe_files(run.out() / "qe" / "dev", world.qe.dev);
  corpus::save_qe_files(run.out() / "qe" / "test", world.qe.test);
  write_noisy(run.out() / "noisy", pipeline::make_noisy_corpus(c, world.language));
  write_json(run.out() / "language.json", {{"source_words", world.language.source_words()},
                                           {"target_words", world.language.target_words()},
                                           {"permutation", world.language.permutation()}});
  auto stats = [](const std::vector<corpus::QESample>& s) {
    auto st = corpus::split_stats(s);
    return json{{"samples", st.samples},         {"avg_source_length", st.avg_source_length},
                {"avg_mt_length", st.avg_mt_length}, {"avg_hter", st.avg_hter},
                {"min_hter", st.min_hter},       {"max_hter", st.max_hter},
                {"bad_word_ratio", st.bad_word_ratio}, {"bad_gap_ratio", st.bad_gap_ratio}};
  };
  write_json(run.out() / "metrics.json", {{"parallel_pairs", world.parallel.size()},
                                          {"train", stats(world.qe.train)},
                                          {"dev", stats(world.qe.dev)},
                                          {"test", stats(world.qe.test)}});
  run.finish();
}

void cmd_train_bpe(const Common& common, const std::string& data) {
  Run run(common, "train-bpe");
  require_path(fs::path(data) / "parallel", "parallel corpus");
  auto tok = pipeline::train_tokenizer(run.config(), corpus::load_parallel(fs::path(data) / "parallel"));
  corpus::save_tokenizer(run.out(), tok);
  write_json(run.out() / "metrics.json",
             {{"merges", tok.merges().rules.size()}, {"vocab_size", tok.vocab().size()}});
  run.finish({{"data", data}});
}

void cmd_train_nmt(const Common& common, const std::string& data, const std::string& tokenizer) {
  Run run(common, "train-nmt");
  const auto& c = run.config();
  require_path(fs::path(data) / "parallel", "parallel corpus");
  auto pairs = corpus::load_parallel(fs::path(data) / "parallel");
  auto tok = tokenizer.empty() ? pipeline::train_tokenizer(c, pairs) : load_tokenizer_dir(tokenizer);
  if (tok.vocab().expert_count() < c.nmt.experts) {
    throw std::runtime_error("tokenizer has " + std::to_string(tok.vocab().expert_count()) +
                             " start tokens, nmt.experts needs " + std::to_string(c.nmt.experts));
  }
  corpus::save_tokenizer(run.out() / "tokenizer", tok);
  auto model = pipeline::train_predictor(c, tok, pairs, c.nmt.experts, c.nmt.dual, run.log());
  nmt::save_nmt(run.out() / "model", model, tok.vocab().hash());
  auto token_pairs = nmt::tokenize_pairs(tok, pairs);
  write_json(run.out() / "metrics.json",
             {{"teacher_forced_accuracy",
               {{"primal", nmt::teacher_forced_accuracy(model, nmt::Direction::primal, token_pairs)},
                {"dual", nmt::teacher_forced_accuracy(model, nmt::Direction::dual, token_pairs)}}}});
  run.finish({{"data", data}, {"tokenizer", tokenizer}});
}

void cmd_train_xlm(const Common& common, const std::string& data, const std::string& nmt_dir) {
  Run run(common, "train-xlm");
  require_path(fs::path(data) / "parallel", "parallel corpus");
  auto pairs = corpus::load_parallel(fs::path(data) / "parallel");
  auto tok = load_tokenizer_dir(fs::path(nmt_dir) / "tokenizer");
  auto model = pipeline::train_xlm(run.config(), tok, pairs, run.log());
  xlm::save_xlm(run.out() / "model", model, tok.vocab().hash());
  write_json(run.out() / "metrics.json",
             {{"masked_accuracy", xlm::masked_accuracy(model, nmt::tokenize_pairs(tok, pairs),
                                                       pipeline::xlm_train_config(run.config()).mask, 1)}});
  run.finish({{"data", data}, {"nmt", nmt_dir}});
}

void cmd_extract_features(const Common& common, const std::string& data, const std::string& nmt_dir,
                          const std::string& xlm_dir) {
  Run run(common, "extract-features");
  const auto& c = run.config();
  if (c.features.use_xlm && xlm_dir.empty()) {
    throw std::runtime_error("features.use_xlm is set: pass --xlm or --set features.use_xlm=false");
  }
  auto p = load_predictors(nmt_dir, c.features.use_xlm ? xlm_dir : "");
  json counts;
  for (const std::string split : {"train", "dev", "test"}) {
    auto samples = load_split(data, split);
    auto feats = pipeline::extract_features(p.nmt, p.xlm ? &*p.xlm : nullptr, p.tokenizer, samples,
                                            c.features.include_dual);
    features::save_feature_cache(run.out() / split, feats,
                                 {{"split", split},
                                  {"include_dual", c.features.include_dual},
                                  {"use_xlm", p.xlm.has_value()},
                                  {"vocab_hash", nn::hash_hex(p.tokenizer.vocab().hash())}});
    counts[split] = feats.size();
    if (auto l = run.log()) l(split + ": " + std::to_string(feats.size()) + " samples");
  }
  write_json(run.out() / "metrics.json", {{"samples", counts}});
  run.finish({{"data", data}, {"nmt", nmt_dir}, {"xlm", xlm_dir}});
}

void cmd_train_estimator(const Common& common, const std::string& data, const std::string& feats,
                         const std::string& task_name) {
  Run run(common, "train-estimator");
  const auto& c = run.config();
  const auto task = estimator::parse_task(task_name);
  auto train_s = load_split(data, "train");
  auto dev_s = load_split(data, "dev");
  json meta;
  auto train_f = features::load_feature_cache(fs::path(feats) / "train", &meta);
  auto dev_f = features::load_feature_cache(fs::path(feats) / "dev");
  const bool use_xlm = c.features.use_xlm && meta.value("use_xlm", false);
  estimator::TrainReport report;
  auto model = pipeline::train_task(c, task, {&train_f, &train_s}, {&dev_f, &dev_s}, use_xlm, &report, run.log());
  estimator::save_estimator(run.out() / "model", model);
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
  }
  write_json(run.out() / "metrics.json",
             {{"task", task_name}, {"best_epoch", report.best_epoch}, {"best_dev", report.best_dev}, {"epochs", epochs}});
  run.finish({{"data", data}, {"features", feats}});
}

void cmd_predict(const Common& common, const std::string& input, const std::string& nmt_dir,
                 const std::string& xlm_dir, const std::string& estimator_dir, const std::string& task_name) {
  Run run(common, "predict");
  const auto& c = run.config();
  require_path(fs::path(input) / "src.txt", "input sources");
  const auto sources = corpus::read_sentences(fs::path(input) / "src.txt");
  if (estimator_dir.empty()) {
    auto p = load_predictors(nmt_dir, "");
    std::vector<nmt::TokenIds> ids;
    for (const auto& s : sources) ids.push_back(p.tokenizer.encode(s).ids);
    const std::size_t max_len = c.data.max_length * c.data.max_word_length + 2;
    std::vector<corpus::Sentence> out;
    for (std::size_t start = 0; start < ids.size(); start += 64) {
      std::vector<nmt::TokenIds> chunk(ids.begin() + static_cast<long>(start),
                                       ids.begin() + static_cast<long>(std::min(ids.size(), start + 64)));
      for (const auto& h : p.nmt.greedy_decode(nmt::Direction::primal, chunk, 0, max_len)) {
        out.push_back(p.tokenizer.decode(h.tokens));
      }
    }
    corpus::write_sentences(run.out() / "translations.txt", out);
    run.finish({{"input", input}, {"nmt", nmt_dir}});
    return;
  }
  const auto task = estimator::parse_task(task_name);
  auto model = estimator::load_estimator(fs::path(estimator_dir) / "model", task);
  if (model.config().use_xlm && xlm_dir.empty()) throw std::runtime_error("the estimator needs --xlm features");
  auto p = load_predictors(nmt_dir, model.config().use_xlm ? xlm_dir : "");
  const auto mts = corpus::read_sentences(fs::path(input) / "mt.txt");
  if (mts.size() != sources.size()) throw std::runtime_error("src.txt and mt.txt line counts differ");
  std::vector<features::SampleFeatures> feats;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    feats.push_back(pipeline::sample_features(p.nmt, p.xlm ? &*p.xlm : nullptr, p.tokenizer, sources[i], mts[i],
                                              c.features.include_dual));
  }
  if (task == estimator::Task::sentence) {
    estimator::write_sentence_predictions(run.out() / "predictions.tsv", pipeline::predict_hter(model, feats));
  } else {
    std::vector<estimator::TagRow> rows;
    auto probs = pipeline::predict_tag_probs(model, feats);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      auto tags = estimator::threshold_tags(probs[i], c.estimator.threshold);
      for (std::size_t j = 0; j < probs[i].size(); ++j) {
        rows.push_back({i, j, task == estimator::Task::gap, probs[i][j], tags[j]});
      }
    }
    estimator::write_tag_predictions(run.out() / "predictions.tsv", rows);
  }
  run.finish({{"input", input}, {"nmt", nmt_dir}, {"xlm", xlm_dir}, {"estimator", estimator_dir}, {"task", task_name}});
}

std::vector<std::vector<corpus::Tag>> group_tags(const std::vector<estimator::TagRow>& rows, bool gap,
                                                 std::size_t sentences) {
  std::vector<std::vector<corpus::Tag>> out(sentences);
  for (const auto& r : rows) {
    if (r.gap != gap) continue;
    if (r.sentence >= sentences) throw std::runtime_error("prediction for unknown sentence " + std::to_string(r.sentence));
    if (r.position != out[r.sentence].size()) throw std::runtime_error("tag predictions out of order");
    out[r.sentence].push_back(r.tag);
  }
  return out;
}

void cmd_evaluate(const Common& common, const std::string& gold_dir, const std::string& sentence_file,
                  const std::string& word_file, const std::string& gap_file) {
  Run run(common, "evaluate");
  require_path(gold_dir, "gold QE directory");
  const auto gold = corpus::load_qe_files(gold_dir);
  json metrics = json::object();
  if (!sentence_file.empty()) {
    auto pred = estimator::read_sentence_predictions(sentence_file);
    std::vector<double> g;
    for (const auto& s : gold) g.push_back(s.hter);
    metrics["sentence"] = eval::to_json(eval::sentence_eval(g, pred));
  }
  if (!word_file.empty() || !gap_file.empty()) {
    if (word_file.empty() || gap_file.empty()) throw std::runtime_error("combined evaluation needs --words and --gaps");
    auto words = group_tags(estimator::read_tag_predictions(word_file), false, gold.size());
    auto gaps = group_tags(estimator::read_tag_predictions(gap_file), true, gold.size());
    std::vector<eval::TagPrediction> preds;
    for (std::size_t i = 0; i < gold.size(); ++i) preds.push_back({words[i], gaps[i]});
    metrics["word_gap"] = eval::to_json(eval::word_level_eval(gold, preds));
  }
  if (metrics.empty()) throw std::runtime_error("nothing to evaluate: pass --sentence and/or --words/--gaps");
  write_json(run.out() / "metrics.json", metrics);
  std::cout << metrics.dump(2) << '\n';
  run.finish({{"gold", gold_dir}, {"sentence", sentence_file}, {"words", word_file}, {"gaps", gap_file}});
}

void cmd_ablate(const Common& common) {
  Run run(common, "ablate");
  auto world = pipeline::make_world(run.config());
  auto rows = pipeline::run_ablation(run.config(), world, run.log());
  json j = json::array();
  for (const auto& r : rows) j.push_back(pipeline::to_json(r));
  write_json(run.out() / "metrics.json", {{"rows", j}});
  const auto table = pipeline::ablation_table(rows);
  std::ofstream(run.out() / "ablation.txt") << table;
  std::cout << table;
  run.finish();
}

void cmd_ensemble(const Common& common, const std::string& data, const std::string& feats) {
  Run run(common, "ensemble");
  const auto& c = run.config();
  auto pool_s = load_split(data, "train");
  auto dev_s = load_split(data, "dev");
  pool_s.insert(pool_s.end(), dev_s.begin(), dev_s.end());
  auto test_s = load_split(data, "test");
  json meta;
  auto pool_f = features::load_feature_cache(fs::path(feats) / "train", &meta);
  auto dev_f = features::load_feature_cache(fs::path(feats) / "dev");
  pool_f.insert(pool_f.end(), dev_f.begin(), dev_f.end());
  auto test_f = features::load_feature_cache(fs::path(feats) / "test");
  const bool use_xlm = c.features.use_xlm && meta.value("use_xlm", false);
  auto report = pipeline::run_ensemble(c, pool_f, pool_s, test_f, test_s, use_xlm, run.log());
  write_json(run.out() / "metrics.json", pipeline::to_json(report));
  run.finish({{"data", data}, {"features", feats}});
}

void cmd_filter(const Common& common, const std::string& corpus_dir, const std::string& nmt_dir,
                const std::string& xlm_dir, const std::string& estimator_dir) {
  Run run(common, "filter");
  const auto& c = run.config();
  require_path(fs::path(corpus_dir) / "src.txt", "corpus");
  auto pairs = corpus::load_parallel(corpus_dir);
  auto model = estimator::load_estimator(fs::path(estimator_dir) / "model", estimator::Task::sentence);
  if (model.config().use_xlm && xlm_dir.empty()) throw std::runtime_error("the estimator needs --xlm features");
  auto p = load_predictors(nmt_dir, model.config().use_xlm ? xlm_dir : "");
  std::vector<bool> truth;
  const fs::path flags = fs::path(corpus_dir) / "corrupted.txt";
  if (fs::exists(flags)) {
    for (auto f : read_flags(flags, pairs.size())) truth.push_back(f != 0);
  }
  auto result = eval::filter_corpus(
      pairs,
      [&](const corpus::ParallelPair& pair) {
        auto f = pipeline::sample_features(p.nmt, p.xlm ? &*p.xlm : nullptr, p.tokenizer, pair.source, pair.target,
                                           c.features.include_dual);
        return model.predict_hter(estimator::make_input(estimator::Task::sentence, f, model.config().use_xlm));
      },
      c.filter.drop_fraction, truth.empty() ? nullptr : &truth);
  std::vector<corpus::ParallelPair> kept, removed;
  for (auto i : result.kept) kept.push_back(pairs[i]);
  for (auto i : result.removed) removed.push_back(pairs[i]);
  corpus::save_parallel(run.out() / "kept", kept);
  corpus::save_parallel(run.out() / "removed", removed);
  {
    std::ofstream s(run.out() / "scores.tsv", std::ios::binary);
    s << "pair_id\thter_hat\tflagged\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      s << i << '\t' << result.scores[i] << '\t' << (result.flagged[i] ? 1 : 0) << '\n';
    }
  }
  write_json(run.out() / "metrics.json", eval::to_json(result.report));
  run.finish({{"corpus", corpus_dir}, {"nmt", nmt_dir}, {"xlm", xlm_dir}, {"estimator", estimator_dir}});
}

void cmd_filtering_experiment(const Common& common) {
  Run run(common, "filtering-experiment");
  const auto& c = run.config();
  auto world = pipeline::make_world(c);
  auto qe = pipeline::train_pipeline(c, world, run.log());
  auto noisy = pipeline::make_noisy_corpus(c, world.language);
  auto report = pipeline::run_filtering_experiment(c, qe, noisy, run.log());
  auto j = pipeline::to_json(report);
  j["qe_dev"] = pipeline::to_json(qe.dev);
  write_json(run.out() / "metrics.json", j);
  std::cout << "removal precision " << report.filter.precision << ", recall " << report.filter.recall << "\n";
  for (const auto& r : report.runs) {
    std::cout << "seed " << r.seed << ": BLEU unfiltered " << r.unfiltered.best_k_mean << ", filtered "
              << r.filtered.best_k_mean << "\n";
  }
  run.finish();
}

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", common.seed, "Master seed (overrides the config)");
  sub->add_option("--set", common.overrides, "Override a config value, e.g. --set nmt.steps=500");
  sub->add_option("--out", common.out, "Output directory")->required();
  sub->add_flag("--force", common.force, "Replace a non-empty output directory");
  sub->add_flag("--quiet", common.quiet, "Suppress progress lines");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quality estimation for machine translation: data, predictors, estimators, filtering"};
  app.require_subcommand(1);
  Common common;
  std::string data, tokenizer, nmt_dir, xlm_dir, feats, task = "sentence", input, estimator_dir, gold, sentence_file,
                                                             word_file, gap_file, corpus_dir;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic language, parallel corpus and QE splits");
  add_common(gen, common);

  auto* bpe = app.add_subcommand("train-bpe", "Train the subword tokenizer on the parallel corpus");
  add_common(bpe, common);
  bpe->add_option("--data", data, "gen-data output directory")->required();

  auto* tnmt = app.add_subcommand("train-nmt", "Train the dual mixture-of-experts predictor");
  add_common(tnmt, common);
  tnmt->add_option("--data", data, "gen-data output directory")->required();
  tnmt->add_option("--tokenizer", tokenizer, "train-bpe output (trained here when absent)");

  auto* txlm = app.add_subcommand("train-xlm", "Pretrain the cross-lingual masked language model");
  add_common(txlm, common);
  txlm->add_option("--data", data, "gen-data output directory")->required();
  txlm->add_option("--nmt", nmt_dir, "train-nmt output (provides the tokenizer)")->required();

  auto* fx = app.add_subcommand("extract-features", "Extract per-token features for every QE split");
  add_common(fx, common);
  fx->add_option("--data", data, "gen-data output directory")->required();
  fx->add_option("--nmt", nmt_dir, "train-nmt output")->required();
  fx->add_option("--xlm", xlm_dir, "train-xlm output");

  auto* test = app.add_subcommand("train-estimator", "Train a sentence, word or gap estimator");
  add_common(test, common);
  test->add_option("--data", data, "gen-data output directory")->required();
  test->add_option("--features", feats, "extract-features output")->required();
  test->add_option("--task", task, "sentence | word | gap");

  auto* pred = app.add_subcommand("predict", "Translate src.txt, or score src.txt/mt.txt with an estimator");
  add_common(pred, common);
  pred->add_option("--input", input, "Directory with src.txt (and mt.txt for QE)")->required();
  pred->add_option("--nmt", nmt_dir, "train-nmt output")->required();
  pred->add_option("--xlm", xlm_dir, "train-xlm output");
  pred->add_option("--estimator", estimator_dir, "train-estimator output");
  pred->add_option("--task", task, "sentence | word | gap");

  auto* ev = app.add_subcommand("evaluate", "Score prediction files against a gold QE directory");
  add_common(ev, common);
  ev->add_option("--gold", gold, "QE split directory")->required();
  ev->add_option("--sentence", sentence_file, "Sentence predictions TSV");
  ev->add_option("--words", word_file, "Word tag predictions TSV");
  ev->add_option("--gaps", gap_file, "Gap tag predictions TSV");

  auto* abl = app.add_subcommand("ablate", "Train and evaluate the four incremental configurations");
  add_common(abl, common);

  auto* ens = app.add_subcommand("ensemble", "Stack several sentence estimators with ridge regression");
  add_common(ens, common);
  ens->add_option("--data", data, "gen-data output directory")->required();
  ens->add_option("--features", feats, "extract-features output")->required();

  auto* flt = app.add_subcommand("filter", "Drop the pairs with the highest predicted HTER");
  add_common(flt, common);
  flt->add_option("--corpus", corpus_dir, "Parallel corpus directory (optional corrupted.txt)")->required();
  flt->add_option("--nmt", nmt_dir, "train-nmt output")->required();
  flt->add_option("--xlm", xlm_dir, "train-xlm output");
  flt->add_option("--estimator", estimator_dir, "Sentence train-estimator output")->required();

  auto* fexp = app.add_subcommand("filtering-experiment", "Filter a noisy corpus and compare retrained BLEU");
  add_common(fexp, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) cmd_gen_data(common);
    else if (*bpe) cmd_train_bpe(common, data);
    else if (*tnmt) cmd_train_nmt(common, data, tokenizer);
    else if (*txlm) cmd_train_xlm(common, data, nmt_dir);
    else if (*fx) cmd_extract_features(common, data, nmt_dir, xlm_dir);
    else if (*test) cmd_train_estimator(common, data, feats, task);
    else if (*pred) cmd_predict(common, input, nmt_dir, xlm_dir, estimator_dir, task);
    else if (*ev) cmd_evaluate(common, gold, sentence_file, word_file, gap_file);
    else if (*abl) cmd_ablate(common);
    else if (*ens) cmd_ensemble(common, data, feats);
    else if (*flt) cmd_filter(common, corpus_dir, nmt_dir, xlm_dir, estimator_dir);
    else if (*fexp) cmd_filtering_experiment(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
