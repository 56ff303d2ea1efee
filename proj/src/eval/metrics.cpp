#include "qe/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace qe::eval {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": lengths differ (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

double safe_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), "pearson");
  if (a.size() < 2) throw std::invalid_argument("pearson: needs at least 2 values");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

ErrorStats mae_rmse(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), "mae_rmse");
  if (a.empty()) throw std::invalid_argument("mae_rmse: empty input");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(a.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

SentenceEvalReport sentence_eval(std::span<const double> gold, std::span<const double> predicted) {
  auto e = mae_rmse(gold, predicted);
  return {pearson(gold, predicted), e.mae, e.rmse};
}

Confusion confusion(std::span<const Tag> gold, std::span<const Tag> predicted) {
  check_lengths(gold.size(), predicted.size(), "confusion");
  Confusion c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == Tag::bad, p = predicted[i] == Tag::bad;
    if (g && p) ++c.tp;
    else if (!g && p) ++c.fp;
    else if (!g && !p) ++c.tn;
    else ++c.fn;
  }
  return c;
}

double mcc(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

double mcc(std::span<const Tag> gold, std::span<const Tag> predicted) { return mcc(confusion(gold, predicted)); }

F1Scores f1_scores(const Confusion& c) { return {safe_f1(c.tp, c.fp, c.fn), safe_f1(c.tn, c.fn, c.fp)}; }

F1Scores f1_scores(std::span<const Tag> gold, std::span<const Tag> predicted) {
  return f1_scores(confusion(gold, predicted));
}

WordEvalReport tag_eval(std::span<const Tag> gold, std::span<const Tag> predicted) {
  auto c = confusion(gold, predicted);
  auto f = f1_scores(c);
  return {mcc(c), f.bad, f.ok, c};
}

WordEvalReport word_level_eval(const std::vector<corpus::QESample>& samples,
                               const std::vector<TagPrediction>& predictions) {
  check_lengths(samples.size(), predictions.size(), "word_level_eval");
  std::vector<Tag> gold, pred;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = predictions[i];
    if (p.words.size() != s.word_tags.size() || p.gaps.size() != s.gap_tags.size()) {
      throw std::invalid_argument("word_level_eval: sentence " + std::to_string(i) + " is misaligned");
    }
    gold.insert(gold.end(), s.word_tags.begin(), s.word_tags.end());
    gold.insert(gold.end(), s.gap_tags.begin(), s.gap_tags.end());
    pred.insert(pred.end(), p.words.begin(), p.words.end());
    pred.insert(pred.end(), p.gaps.begin(), p.gaps.end());
  }
  return tag_eval(gold, pred);
}

double corpus_bleu(const std::vector<corpus::Sentence>& hypotheses, const std::vector<corpus::Sentence>& references,
                   std::size_t max_n) {
  check_lengths(hypotheses.size(), references.size(), "corpus_bleu");
  if (references.empty()) throw std::invalid_argument("corpus_bleu: no references");
  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
      total[n - 1] += h.size() - n + 1;
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double bp =
      hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

nlohmann::json to_json(const SentenceEvalReport& r) {
  return {{"pearson", r.pearson}, {"mae", r.mae}, {"rmse", r.rmse}};
}

nlohmann::json to_json(const WordEvalReport& r) {
  return {{"mcc", r.mcc},
          {"f1_bad", r.f1_bad},
          {"f1_ok", r.f1_ok},
          {"tp", r.counts.tp},
          {"fp", r.counts.fp},
          {"tn", r.counts.tn},
          {"fn", r.counts.fn}};
}

}  // namespace qe::eval
