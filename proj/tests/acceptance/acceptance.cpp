// Acceptance suite: one PASS/FAIL line per criterion. An optional argument
// selects criteria by id, e.g. `acceptance C3 C7`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qe/nmt/dual_nmt.hpp"
#include "qe/nn/checkpoint.hpp"
#include "qe/nn/ops.hpp"
#include "qe/nn/optim.hpp"
#include "qe/pipeline/pipeline.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace qe;
using nn::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

void progress(const std::string& line) { std::cerr << "  " << line << std::endl; }

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(QE_SCRATCH_DIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + QE_CLI + "\" " + args + " --quiet";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- C1

template <typename T>
Tensor<T> random_tensor(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<T> v(nn::shape_size(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), grad);
}

Tensor<double> probe(const Tensor<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return nn::sum(nn::mul(out, random_tensor<double>(out.shape(), rng, 1.0, false)));
}

Outcome c1_gradients() {
  using D = double;
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const std::function<Tensor<D>()>& f, const std::vector<Tensor<D>>& in) {
    errs.emplace_back(name, nn::grad_check<D>(f, in));
  };
  auto a = random_tensor<D>({3, 4}, rng), b = random_tensor<D>({3, 4}, rng), c = random_tensor<D>({4, 5}, rng);
  auto e = random_tensor<D>({5, 4}, rng), row = random_tensor<D>({4}, rng);
  check("matmul", [&] { return probe(nn::matmul(a, c), 1); }, {a, c});
  check("matmul_bt", [&] { return probe(nn::matmul_bt(a, e), 2); }, {a, e});
  check("add", [&] { return probe(nn::add(a, b), 3); }, {a, b});
  check("sub", [&] { return probe(nn::sub(a, b), 4); }, {a, b});
  check("mul", [&] { return probe(nn::mul(a, b), 5); }, {a, b});
  check("add_row", [&] { return probe(nn::add_row(a, row), 6); }, {a, row});
  check("scale", [&] { return probe(nn::scale(a, 1.7), 7); }, {a});
  check("add_const", [&] { return probe(nn::add_const(a, std::vector<D>(12, 0.3)), 8); }, {a});
  check("relu", [&] { return probe(nn::relu(a), 9); }, {a});
  check("tanh", [&] { return probe(nn::tanh(a), 10); }, {a});
  check("sigmoid", [&] { return probe(nn::sigmoid(a), 11); }, {a});
  check("softmax", [&] { return probe(nn::softmax(a), 12); }, {a});
  check("softmax_axis0", [&] { return probe(nn::softmax(a, 0), 13); }, {a});
  auto gain = random_tensor<D>({4}, rng), bias = random_tensor<D>({4}, rng);
  check("layer_norm", [&] { return probe(nn::layer_norm(a, gain, bias, 1e-5), 14); }, {a, gain, bias});
  check("embedding", [&] { return probe(nn::embedding(e, {1, 4, 1}), 15); }, {e});
  check("concat_cols", [&] { return probe(nn::concat_cols<D>({a, b}), 16); }, {a, b});
  check("slice_cols", [&] { return probe(nn::slice_cols(a, 1, 2), 17); }, {a});
  check("concat_rows", [&] { return probe(nn::concat_rows<D>({a, e}), 18); }, {a, e});
  check("gather_rows", [&] { return probe(nn::gather_rows(a, {2, 0, 2}), 19); }, {a});
  check("sum", [&] { return nn::sum(a); }, {a});
  check("mean", [&] { return nn::mean(a); }, {a});
  check("cross_entropy_rows", [&] { return nn::sum(nn::cross_entropy_rows(a, {0, -1, 3}, {1.0, 1.0, 2.0})); }, {a});
  check("topk_pool_mean", [&] { return probe(nn::topk_pool(a, 2, nn::PoolMode::mean_topk), 20); }, {a});
  check("topk_pool_max", [&] { return probe(nn::topk_pool(a, 2, nn::PoolMode::max), 21); }, {a});
  check("segment_mean", [&] { return probe(nn::segment_mean(a, {0, 1, 1}, 2), 22); }, {a});
  auto q = random_tensor<D>({6, 4}, rng), k = random_tensor<D>({6, 4}, rng), v = random_tensor<D>({6, 4}, rng);
  nn::AttentionLayout pad{2, 3, 3, {3, 2}, false}, causal{2, 3, 3, {3, 2}, true};
  check("attention_pad", [&] { return probe(nn::attention(q, k, v, 2, pad), 23); }, {q, k, v});
  check("attention_causal", [&] { return probe(nn::attention(q, k, v, 2, causal), 24); }, {q, k, v});
  auto proj = random_tensor<D>({4, 9}, rng, 0.7), rec = random_tensor<D>({3, 9}, rng, 0.7);
  check("gru_scan", [&] { return probe(nn::gru_scan(proj, rec, false), 25); }, {proj, rec});
  check("gru_scan_reverse", [&] { return probe(nn::gru_scan(proj, rec, true), 26); }, {proj, rec});

  nn::Rng brng(4);
  nn::ParameterSet<D> ps;
  auto block = nmt::UnifiedBlock<D>::create(ps, "b", 8, 2, 12, brng);
  auto x = random_tensor<D>({8, 8}, rng), ctx_states = random_tensor<D>({6, 8}, rng);
  std::vector<Tensor<D>> inputs = {x, ctx_states};
  for (std::size_t i = 0; i < ps.size(); ++i) inputs.push_back(ps[i].tensor);
  nn::AttentionLayout self{2, 4, 4, {4, 3}, true}, enc{2, 4, 4, {4, 3}, false};
  nmt::CrossContext<D> ctx{ctx_states, nn::AttentionLayout{2, 4, 3, {3, 2}, false}};
  check("unified_block_decode",
        [&] { return probe(nmt::unified_block_forward(block, x, self, nmt::BlockMode::decode, &ctx), 27); }, inputs);
  check("unified_block_encode",
        [&] { return probe(nmt::unified_block_forward(block, x, enc, nmt::BlockMode::encode, nullptr), 28); },
        inputs);

  auto worst = std::max_element(errs.begin(), errs.end(), [](auto& l, auto& r) { return l.second < r.second; });
  const double elapsed = seconds_since(start);
  return {worst->second < 1e-5 && elapsed < 120.0,
          std::to_string(errs.size()) + " ops, max rel err " + num(worst->second, 3) + " (" + worst->first +
              ", limit 1e-5), " + num(elapsed, 3) + " s (limit 120 s)"};
}

// ---------------------------------------------------------------- C2

template <typename T>
bool zero_branch_identity(std::uint64_t seed) {
  nn::Rng rng(seed);
  std::mt19937_64 r(seed);
  nn::ParameterSet<T> ps;
  auto enc = nmt::ConditionalEncoder<T>::create(ps, "e", 2, 16, 4, 32, rng);
  auto x = random_tensor<T>({2 * 5, 16}, r, 1.0, false);
  nn::AttentionLayout layout{2, 5, 5, {5, 3}, false};
  auto a = enc.forward(x, layout, nmt::BlockMode::encode, nullptr, false);
  auto b = enc.forward(x, layout, nmt::BlockMode::encode, nullptr, true);
  return std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
}

Outcome c2_zero_attention() {
  bool identical = true;
  for (std::uint64_t s = 1; s <= 5; ++s) identical = identical && zero_branch_identity<float>(s) &&
                                                     zero_branch_identity<double>(s);
  nn::Rng rng(2);
  std::mt19937_64 r(2);
  nn::ParameterSet<double> ps;
  auto block = nmt::UnifiedBlock<double>::create(ps, "b", 8, 2, 12, rng);
  auto x = random_tensor<double>({4, 8}, r);
  auto out = nmt::unified_block_forward(block, x, {1, 4, 4, {4}, false}, nmt::BlockMode::encode, nullptr);
  probe(out, 5).backward();
  std::size_t nonzero = 0, checked = 0;
  for (auto* t : {&block.cross_attention.query, &block.cross_attention.key, &block.cross_attention.value,
                  &block.cross_attention.output}) {
    if (!t->has_grad()) continue;
    for (double g : t->grad()) {
      ++checked;
      if (g != 0.0) ++nonzero;
    }
  }
  return {identical && nonzero == 0 && checked > 0,
          std::string("encode vs skip-branch ") + (identical ? "bit-equal" : "DIFFER") + " (float+double, 5 seeds); " +
              std::to_string(nonzero) + " nonzero of " + std::to_string(checked) + " cross-attention grads"};
}

// ---------------------------------------------------------------- C3

Outcome c3_hard_em() {
  auto language = corpus::SyntheticLanguage::generate({});
  std::vector<corpus::Sentence> words;
  for (const auto& w : language.source_words()) words.push_back({w});
  for (const auto& w : language.target_words()) words.push_back({w});
  auto tok = corpus::Tokenizer::train(corpus::word_counts(words), 40, 3);
  nmt::NmtConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ff_dim = 32;
  cfg.experts = 3;
  cfg.seed = 9;
  nmt::DualNmt model(cfg, tok.vocab().size());

  std::mt19937_64 rng(33);
  const int first = tok.vocab().first_regular(), last = static_cast<int>(tok.vocab().size()) - 1;
  std::uniform_int_distribution<int> id(first, last);
  std::uniform_int_distribution<std::size_t> len(1, 10);
  auto random_seq = [&] {
    nmt::TokenIds s(len(rng));
    for (auto& t : s) t = id(rng);
    return s;
  };
  std::size_t samples = 0, mismatches = 0, bad_resp = 0;
  for (std::size_t batch = 0; batch < 20; ++batch) {
    std::vector<nmt::TokenIds> xs, ys;
    for (std::size_t i = 0; i < 50; ++i) {
      xs.push_back(random_seq());
      ys.push_back(random_seq());
    }
    const auto d = batch % 2 == 0 ? nmt::Direction::primal : nmt::Direction::dual;
    auto mix = model.mixture_loss(d, xs, ys);
    std::vector<std::vector<double>> per(3);
    for (std::size_t z = 0; z < 3; ++z) per[z] = model.expert_nlls(d, xs, ys, z);
    for (std::size_t b = 0; b < xs.size(); ++b, ++samples) {
      const double m = std::min({per[0][b], per[1][b], per[2][b]});
      if (mix.nll[b] != m) ++mismatches;
      auto resp = nmt::responsibility({per[0][b], per[1][b], per[2][b]});
      std::size_t first_min = 0;
      while (per[first_min][b] != m) ++first_min;
      const int ones = std::accumulate(resp.begin(), resp.end(), 0);
      if (ones != 1 || resp[first_min] != 1 || mix.winners[b] != first_min) ++bad_resp;
    }
  }
  // Ties go to the lowest index.
  const bool ties = nmt::responsibility({2.0, 1.0, 1.0}) == std::vector<int>{0, 1, 0} &&
                    nmt::responsibility({0.5, 0.5, 0.5}) == std::vector<int>{1, 0, 0};
  return {mismatches == 0 && bad_resp == 0 && ties,
          std::to_string(samples) + " samples: " + std::to_string(mismatches) + " loss mismatches (bit-exact), " +
              std::to_string(bad_resp) + " non-one-hot or mis-tied responsibilities; tie rule " +
              (ties ? "lowest index" : "WRONG")};
}

// ---------------------------------------------------------------- C4

Outcome c4_feature_width() {
  const bool paper = features::feature_width(5, 512) == 5140;
  bool arithmetic = true;
  for (std::size_t k = 1; k <= 8; ++k) {
    for (std::size_t d : {4u, 8u, 64u, 512u}) arithmetic = arithmetic && features::feature_width(k, d) == k * (2 * d + 4);
  }
  auto language = corpus::SyntheticLanguage::generate({});
  auto pairs = corpus::gen_parallel(3, {4, 1, 4, 8}, language);
  std::size_t configs = 0;
  bool equal = true;
  for (std::size_t k : {1u, 2u, 3u, 5u}) {
    for (std::size_t d : {8u, 16u}) {
      std::vector<corpus::Sentence> words;
      for (const auto& p : pairs) {
        words.push_back(p.source);
        words.push_back(p.target);
      }
      auto tok = corpus::Tokenizer::train(corpus::word_counts(words), 10, k);
      nmt::NmtConfig nc;
      nc.model_dim = d;
      nc.heads = 2;
      nc.layers = 1;
      nc.ff_dim = 2 * d;
      nc.experts = k;
      xlm::XlmConfig xc;
      xc.model_dim = d;
      xc.heads = 2;
      xc.layers = 1;
      xc.ff_dim = 2 * d;
      nmt::DualNmt nmt(nc, tok.vocab().size());
      xlm::Xlm xlm(xc, tok.vocab().size(), k);
      for (const auto& p : pairs) {
        auto src = tok.encode(p.source).ids;
        auto mt = tok.encode(p.target);
        auto a = features::assemble_nmt_features(nmt, src, mt);
        auto b = features::assemble_xlm_features(xlm, k, src, mt);
        equal = equal && a.matrix.cols == b.matrix.cols && a.matrix.cols == features::feature_width(k, d) &&
                a.matrix.rows == b.matrix.rows;
      }
      ++configs;
    }
  }
  return {paper && arithmetic && equal, "K=5,d=512 -> " + std::to_string(features::feature_width(5, 512)) +
                                            " (expect 5140); NMT/XLM widths equal on " + std::to_string(configs) +
                                            " built configs: " + (equal ? "yes" : "NO")};
}

// ---------------------------------------------------------------- C5

Outcome c5_hter() {
  corpus::Sentence mt = {"许多", "蝴蝶", "在", "花草", "间", "飘动", "."};
  corpus::Sentence pe = {"许多", "蝴蝶", "在", "花草", "丛中", "飞舞", "。"};
  const double example = corpus::compute_hter(mt, pe);
  const double same = corpus::compute_hter(pe, pe);
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> len(0, 9), word(0, 5);
  std::size_t mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    corpus::Sentence a, b;
    for (int n = len(rng); n > 0; --n) a.push_back(std::string(1, static_cast<char>('a' + word(rng))));
    for (int n = len(rng); n > 0; --n) b.push_back(std::string(1, static_cast<char>('a' + word(rng))));
    if (corpus::edit_distance(a, b) != oracle::oracle_distance(a, b)) ++mismatches;
    if (!a.empty()) {
      const double h = std::min(1.0, static_cast<double>(oracle::oracle_distance(a, b)) / static_cast<double>(a.size()));
      if (corpus::compute_hter(a, b) != h) ++mismatches;
    }
  }
  const bool pass = std::abs(example - 0.4286) <= 1e-4 && same == 0.0 && mismatches == 0;
  return {pass, "example " + num(example, 6) + " (0.4286 +- 1e-4), identical " + num(same) + ", " +
                    std::to_string(mismatches) + " oracle mismatches on 500 random pairs"};
}

// ---------------------------------------------------------------- C6

Outcome c6_metrics() {
  using corpus::Tag;
  std::mt19937_64 rng(66);
  std::normal_distribution<double> n(0, 1);
  std::bernoulli_distribution coin(0.35);
  std::uniform_int_distribution<int> word(0, 3), length(3, 9);
  double worst = 0.0;
  bool invariances = true;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  auto swap = [](std::vector<Tag> t) {
    for (auto& x : t) x = x == Tag::bad ? Tag::ok : Tag::bad;
    return t;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 3 + static_cast<std::size_t>(trial % 17);
    std::vector<double> a(len), b(len), a2(len);
    for (std::size_t i = 0; i < len; ++i) {
      a[i] = n(rng);
      b[i] = 0.4 * a[i] + n(rng);
      a2[i] = 2 * a[i] + 3;
    }
    track(eval::pearson(a, b), oracle::oracle_pearson(a, b));
    auto e = eval::mae_rmse(a, b);
    auto o = oracle::oracle_mae_rmse(a, b);
    track(e.mae, o.first);
    track(e.rmse, o.second);
    invariances = invariances && std::abs(eval::pearson(a, b) - eval::pearson(a2, b)) <= 1e-12;

    std::vector<Tag> g(len), p(len);
    for (std::size_t i = 0; i < len; ++i) {
      g[i] = coin(rng) ? Tag::bad : Tag::ok;
      p[i] = coin(rng) ? Tag::bad : Tag::ok;
    }
    track(eval::mcc(g, p), oracle::oracle_mcc(g, p));
    auto f = eval::f1_scores(g, p);
    track(f.bad, oracle::oracle_f1(g, p, Tag::bad));
    track(f.ok, oracle::oracle_f1(g, p, Tag::ok));
    auto fs = eval::f1_scores(swap(g), swap(p));
    invariances = invariances && std::abs(fs.bad - f.ok) <= 1e-12 && std::abs(fs.ok - f.bad) <= 1e-12 &&
                  std::abs(std::abs(eval::mcc(swap(g), swap(p))) - std::abs(eval::mcc(g, p))) <= 1e-12;

    std::vector<corpus::Sentence> h, r;
    for (int s = 0; s < 4; ++s) {
      corpus::Sentence x, y;
      for (int i = length(rng); i > 0; --i) x.push_back(std::string(1, static_cast<char>('a' + word(rng))));
      for (int i = length(rng); i > 0; --i) y.push_back(std::string(1, static_cast<char>('a' + word(rng))));
      h.push_back(x);
      r.push_back(y);
    }
    track(eval::corpus_bleu(h, r), oracle::oracle_bleu(h, r));
  }
  return {worst <= 1e-10 && invariances, "max |metric - oracle| " + num(worst, 3) +
                                             " over 100 trials x 7 metrics (limit 1e-10); invariances " +
                                             (invariances ? "hold" : "VIOLATED")};
}

// ---------------------------------------------------------------- C7 / C8 shared

struct SyntheticTask {
  corpus::SyntheticLanguage language = corpus::SyntheticLanguage::generate({});
  std::vector<corpus::ParallelPair> train, held_out;
  corpus::Tokenizer tokenizer;

  SyntheticTask(std::size_t styles, std::size_t experts, std::size_t pairs, std::size_t held) {
    train = corpus::gen_parallel(71, {pairs, styles, 4, 12}, language);
    held_out = corpus::gen_parallel(72, {held, styles, 4, 12}, language);
    std::vector<corpus::Sentence> text;
    for (const auto& p : train) {
      text.push_back(p.source);
      text.push_back(p.target);
    }
    tokenizer = corpus::Tokenizer::train(corpus::word_counts(text), 200, experts);
  }
};

nmt::NmtConfig desk_nmt(std::size_t experts) {
  nmt::NmtConfig c;
  c.model_dim = 64;
  c.heads = 4;
  c.layers = 2;
  c.ff_dim = 128;
  c.experts = experts;
  c.max_positions = 128;
  c.seed = 1;
  return c;
}

Outcome c7_dual_sanity() {
  const auto start = Clock::now();
  SyntheticTask task(1, 1, 2000, 200);
  nmt::DualNmt model(desk_nmt(1), task.tokenizer.vocab().size());
  auto train = nmt::tokenize_pairs(task.tokenizer, task.train);
  auto held = nmt::tokenize_pairs(task.tokenizer, task.held_out);
  nmt::NmtTrainConfig tc;
  tc.steps = 1500;
  tc.log_every = 250;
  double primal = 0.0, dual = 0.0;
  nmt::train_nmt(model, train, tc, [&](const nmt::NmtTrainLog& l) {
    primal = nmt::teacher_forced_accuracy(model, nmt::Direction::primal, held);
    dual = nmt::teacher_forced_accuracy(model, nmt::Direction::dual, held);
    progress("C7 step " + std::to_string(l.step) + ": primal " + num(primal) + " dual " + num(dual));
  });
  const double elapsed = seconds_since(start);
  return {primal >= 0.9 && dual >= 0.9 && elapsed < 900.0,
          "held-out teacher-forced accuracy primal " + num(primal) + ", dual " + num(dual) + " (>= 0.9) after " +
              std::to_string(tc.steps) + " steps, " + num(elapsed, 3) + " s (limit 900 s)"};
}

double word_accuracy(const corpus::Sentence& hyp, const corpus::Sentence& ref) {
  const std::size_t n = std::max(hyp.size(), ref.size());
  if (n == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) hits += hyp[i] == ref[i];
  return static_cast<double>(hits) / static_cast<double>(n);
}

Outcome c8_specialization() {
  const auto start = Clock::now();
  const std::size_t K = 3;
  SyntheticTask task(3, K, 2000, 300);
  nmt::DualNmt model(desk_nmt(K), task.tokenizer.vocab().size());
  nmt::NmtTrainConfig tc;
  tc.steps = 4000;
  tc.log_every = 500;
  nmt::train_nmt(model, nmt::tokenize_pairs(task.tokenizer, task.train), tc, [&](const nmt::NmtTrainLog& l) {
    progress("C8 step " + std::to_string(l.step) + " primal " + num(l.primal) + " dual " + num(l.dual));
  });

  std::vector<nmt::TokenIds> sources;
  for (const auto& p : task.held_out) sources.push_back(task.tokenizer.encode(p.source).ids);
  std::vector<std::vector<corpus::Sentence>> hyps(K);
  for (std::size_t z = 0; z < K; ++z) {
    for (const auto& h : model.greedy_decode(nmt::Direction::primal, sources, z, 64)) {
      hyps[z].push_back(task.tokenizer.decode(h.tokens));
    }
  }
  // acc[z][s]: mean word accuracy of expert z against style s references.
  std::vector<std::vector<double>> acc(K, std::vector<double>(K, 0.0));
  for (std::size_t z = 0; z < K; ++z) {
    for (std::size_t s = 0; s < K; ++s) {
      for (std::size_t i = 0; i < sources.size(); ++i) {
        acc[z][s] += word_accuracy(hyps[z][i], task.language.translate(task.held_out[i].source, s));
      }
      acc[z][s] /= static_cast<double>(sources.size());
    }
  }
  std::vector<std::size_t> perm(K), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_total = -1.0;
  do {
    double total = 0.0;
    for (std::size_t z = 0; z < K; ++z) total += acc[z][perm[z]];
    if (total > best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  double worst_matched = 1.0;
  std::string matching;
  for (std::size_t z = 0; z < K; ++z) {
    worst_matched = std::min(worst_matched, acc[z][best[z]]);
    matching += " e" + std::to_string(z) + "->s" + std::to_string(best[z]) + "=" + num(acc[z][best[z]], 3);
  }
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    std::set<corpus::Sentence> seen;
    for (std::size_t z = 0; z < K; ++z) seen.insert(hyps[z][i]);
    distinct += seen.size() == K;
  }
  const double distinct_rate = static_cast<double>(distinct) / static_cast<double>(sources.size());
  return {worst_matched >= 0.8 && distinct_rate >= 0.8,
          "matching" + matching + " (each >= 0.8); pairwise-distinct hypotheses " + num(distinct_rate, 3) +
              " (>= 0.8); " + num(seconds_since(start), 3) + " s"};
}

// ---------------------------------------------------------------- C9

Outcome c9_end_to_end() {
  const auto start = Clock::now();
  pipeline::RunConfig c;
  auto world = pipeline::make_world(c);
  auto qe = pipeline::train_pipeline(c, world, [](const std::string& l) {
    if (l.find("epoch") == std::string::npos) progress("C9 " + l);
  });
  const double elapsed = seconds_since(start);
  return {qe.dev.sentence.pearson >= 0.6 && qe.dev.tags.mcc >= 0.4 && elapsed < 1800.0,
          std::to_string(c.data.qe_samples) + " QE samples: dev Pearson " + num(qe.dev.sentence.pearson) +
              " (>= 0.6), word+gap MCC " + num(qe.dev.tags.mcc) + " (>= 0.4), " + num(elapsed, 3) +
              " s (limit 1800 s)"};
}

// ---------------------------------------------------------------- C10

Outcome c10_ablation() {
  const auto dir = scratch("c10");
  const int rc = run_cli("ablate --out \"" + (dir / "run").string() +
                         "\" --set nmt.steps=1000 --set xlm.steps=500 --set estimator.epochs=5");
  if (rc != 0) return {false, "qe ablate exited with status " + std::to_string(rc)};
  auto metrics = nlohmann::json::parse(slurp(dir / "run" / "metrics.json"));
  const std::vector<std::string> expected = {"NMT", "+XLM", "+mixture&dual", "+f_dual"};
  std::vector<std::string> names;
  bool complete = true;
  for (const auto& r : metrics.at("rows")) {
    names.push_back(r.at("name").get<std::string>());
    complete = complete && r.at("test").contains("sentence") && r.at("test").contains("word_gap");
  }
  const bool table = fs::exists(dir / "run" / "ablation.txt") && !fs::exists(dir / "run" / "INCOMPLETE");
  std::string order;
  for (const auto& n : names) order += (order.empty() ? "" : " -> ") + n;
  return {names == expected && complete && table,
          std::to_string(names.size()) + " rows: " + order + (complete ? "; every row evaluated" : "; MISSING metrics")};
}

// ---------------------------------------------------------------- C11

Outcome c11_filtering() {
  const auto start = Clock::now();
  pipeline::RunConfig c;
  auto world = pipeline::make_world(c);
  auto log = [](const std::string& l) {
    if (l.find("epoch") == std::string::npos) progress("C11 " + l);
  };
  auto qe = pipeline::train_pipeline(c, world, log);
  auto noisy = pipeline::make_noisy_corpus(c, world.language);
  auto report = pipeline::run_filtering_experiment(c, qe, noisy, log);
  const double elapsed = seconds_since(start);
  std::string bleu;
  for (const auto& r : report.runs) {
    bleu += " seed " + std::to_string(r.seed) + ": " + num(r.unfiltered.best_k_mean) + " -> " +
            num(r.filtered.best_k_mean) + ";";
  }
  return {report.filter.precision >= 0.7 && report.filtered_wins >= 2 && elapsed < 1800.0,
          "removal precision " + num(report.filter.precision) + " (>= 0.7), recall " + num(report.filter.recall) +
              "; BLEU unfiltered -> filtered" + bleu + " filtered wins " + std::to_string(report.filtered_wins) +
              "/" + std::to_string(report.runs.size()) + " (>= 2); " + num(elapsed, 3) + " s (limit 1800 s)"};
}

// ---------------------------------------------------------------- C12

template <typename T>
bool same_params(const nn::ParameterSet<T>& a, const nn::ParameterSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) return false;
    const auto& x = a[i].tensor.values();
    const auto& y = b[i].tensor.values();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

Outcome c12_reproducibility() {
  const auto dir = scratch("c12");
  const std::string sets =
      " --set data.parallel_pairs=300 --set data.qe_samples=200 --set nmt.steps=60 --set xlm.steps=40"
      " --set estimator.epochs=2";
  const std::vector<std::string> steps = {"gen-data", "train-nmt", "train-xlm", "extract-features",
                                          "train-estimator", "evaluate"};
  for (const std::string run : {"a", "b"}) {
    const auto r = dir / run;
    const std::string q = "\"" + r.string() + "/";
    const std::vector<std::string> cmds = {
        "gen-data --out " + q + "data\"" + sets,
        "train-nmt --data " + q + "data\" --out " + q + "nmt\"" + sets,
        "train-xlm --data " + q + "data\" --nmt " + q + "nmt\" --out " + q + "xlm\"" + sets,
        "extract-features --data " + q + "data\" --nmt " + q + "nmt\" --xlm " + q + "xlm\" --out " + q + "feat\"" + sets,
        "train-estimator --data " + q + "data\" --features " + q + "feat\" --out " + q + "est\"" + sets,
        "predict --input " + q + "data/qe/dev\" --nmt " + q + "nmt\" --xlm " + q + "xlm\" --estimator " + q +
            "est\" --out " + q + "pred\"" + sets,
        "evaluate --gold " + q + "data/qe/dev\" --sentence " + q + "pred/predictions.tsv\" --out " + q + "eval\"" +
            sets + " > /dev/null",
    };
    for (const auto& cmd : cmds) {
      if (run_cli(cmd) != 0) return {false, "command failed: qe " + cmd};
    }
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const std::string sub : {"data", "nmt", "xlm", "feat", "est", "eval"}) {
    const auto a = dir / "a" / sub / "metrics.json", b = dir / "b" / sub / "metrics.json";
    if (!fs::exists(a) || !fs::exists(b)) return {false, "missing metrics.json in " + sub};
    ++compared;
    if (slurp(a) != slurp(b)) differing.push_back(sub);
  }
  const bool predictions_equal = slurp(dir / "a" / "pred" / "predictions.tsv") == slurp(dir / "b" / "pred" / "predictions.tsv");

  // Bit-exact round trips of every trained model kind.
  auto tok = corpus::load_tokenizer(dir / "a" / "nmt" / "tokenizer");
  auto nmt = nmt::load_nmt(dir / "a" / "nmt" / "model", tok.vocab().hash());
  nmt::save_nmt(dir / "rt_nmt", nmt, tok.vocab().hash());
  const bool nmt_rt = same_params(nmt.params(), nmt::load_nmt(dir / "rt_nmt", tok.vocab().hash()).params()) &&
                      slurp(dir / "rt_nmt" / "weights.bin") == slurp(dir / "a" / "nmt" / "model" / "weights.bin");
  auto xlm = xlm::load_xlm(dir / "a" / "xlm" / "model", tok.vocab().hash());
  xlm::save_xlm(dir / "rt_xlm", xlm, tok.vocab().hash());
  const bool xlm_rt = same_params(xlm.params(), xlm::load_xlm(dir / "rt_xlm", tok.vocab().hash()).params());
  auto est = estimator::load_estimator(dir / "a" / "est" / "model", estimator::Task::sentence);
  estimator::save_estimator(dir / "rt_est", est);
  const bool est_rt =
      same_params(est.params(), estimator::load_estimator(dir / "rt_est", estimator::Task::sentence).params());
  bool wrong_task_rejected = false;
  try {
    estimator::load_estimator(dir / "a" / "est" / "model", estimator::Task::word);
  } catch (const std::exception&) {
    wrong_task_rejected = true;
  }
  bool hash_rejected = false;
  try {
    nmt::load_nmt(dir / "a" / "nmt" / "model", tok.vocab().hash() ^ 1u);
  } catch (const std::exception&) {
    hash_rejected = true;
  }
  const bool pass = differing.empty() && predictions_equal && nmt_rt && xlm_rt && est_rt && wrong_task_rejected &&
                    hash_rejected;
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  return {pass, std::to_string(compared) + " metrics.json pairs " +
                    (differing.empty() ? std::string("byte-identical") : "DIFFER:" + diff) + ", predictions " +
                    (predictions_equal ? "identical" : "DIFFER") + "; round trips nmt/xlm/estimator " +
                    (nmt_rt && xlm_rt && est_rt ? "bit-exact" : "BROKEN") + "; wrong task " +
                    (wrong_task_rejected ? "rejected" : "ACCEPTED") + ", vocab hash mismatch " +
                    (hash_rejected ? "rejected" : "ACCEPTED")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"C1", c1_gradients},      {"C2", c2_zero_attention}, {"C3", c3_hard_em},
      {"C4", c4_feature_width},  {"C5", c5_hter},           {"C6", c6_metrics},
      {"C7", c7_dual_sanity},    {"C8", c8_specialization}, {"C9", c9_end_to_end},
      {"C10", c10_ablation},     {"C11", c11_filtering},    {"C12", c12_reproducibility},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  int failures = 0, ran = 0;
  for (const auto& [id, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    ++ran;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << id << (o.pass ? " PASS " : " FAIL ") << o.detail << std::endl;
    failures += !o.pass;
  }
  if (ran == 0) {
    std::cerr << "no criterion matched\n";
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
