#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <json.hpp>

#include "qe/corpus/synthetic.hpp"

namespace qe::eval {

struct FilterReport {
  std::size_t total = 0;
  std::size_t removed = 0;
  std::size_t flagged = 0;  // empty pairs scored 1.0 without the scorer
  bool has_truth = false;
  // Removal counted as a positive prediction of corruption.
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;  // 0 when nothing is removed
  double recall = 0.0;     // 0 when nothing is corrupted
};

struct FilterResult {
  std::vector<std::size_t> kept;     // corpus order
  std::vector<std::size_t> removed;  // highest score first
  std::vector<double> scores;
  std::vector<bool> flagged;
  FilterReport report;
};

// Scores every pair (higher means worse), stable-sorts by descending score
// and removes the first floor(drop_fraction * n). `corrupted`, when given,
// holds the ground-truth flag of each pair.
FilterResult filter_corpus(const std::vector<corpus::ParallelPair>& pairs,
                           const std::function<double(const corpus::ParallelPair&)>& score, double drop_fraction,
                           const std::vector<bool>* corrupted = nullptr);

nlohmann::json to_json(const FilterReport& r);

}  // namespace qe::eval
