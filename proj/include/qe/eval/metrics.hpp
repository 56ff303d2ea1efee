#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "qe/corpus/qe_data.hpp"

namespace qe::eval {

using corpus::Tag;

// Sample Pearson coefficient. Throws std::invalid_argument when either side
// has zero variance or fewer than 2 values.
double pearson(std::span<const double> a, std::span<const double> b);

struct ErrorStats {
  double mae = 0.0;
  double rmse = 0.0;
};
ErrorStats mae_rmse(std::span<const double> a, std::span<const double> b);

struct SentenceEvalReport {
  double pearson = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
};
SentenceEvalReport sentence_eval(std::span<const double> gold, std::span<const double> predicted);

// BAD is the positive class.
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};
Confusion confusion(std::span<const Tag> gold, std::span<const Tag> predicted);

// Zero denominator gives 0.
double mcc(const Confusion& c);
double mcc(std::span<const Tag> gold, std::span<const Tag> predicted);

struct F1Scores {
  double bad = 0.0;
  double ok = 0.0;
};
// A class with no gold and no predicted members scores 0.
F1Scores f1_scores(const Confusion& c);
F1Scores f1_scores(std::span<const Tag> gold, std::span<const Tag> predicted);

struct WordEvalReport {
  double mcc = 0.0;
  double f1_bad = 0.0;
  double f1_ok = 0.0;
  Confusion counts;
};
WordEvalReport tag_eval(std::span<const Tag> gold, std::span<const Tag> predicted);

struct TagPrediction {
  std::vector<Tag> words;
  std::vector<Tag> gaps;
};
// Concatenates each sentence's word tags then its gap tags.
WordEvalReport word_level_eval(const std::vector<corpus::QESample>& samples,
                               const std::vector<TagPrediction>& predictions);

// Unsmoothed corpus BLEU with brevity penalty, in [0,1]. Any zero n-gram
// precision gives 0.
double corpus_bleu(const std::vector<corpus::Sentence>& hypotheses, const std::vector<corpus::Sentence>& references,
                   std::size_t max_n = 4);

nlohmann::json to_json(const SentenceEvalReport& r);
nlohmann::json to_json(const WordEvalReport& r);

}  // namespace qe::eval
