#include "qe/eval/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qe::eval {

FilterResult filter_corpus(const std::vector<corpus::ParallelPair>& pairs,
                           const std::function<double(const corpus::ParallelPair&)>& score, double drop_fraction,
                           const std::vector<bool>* corrupted) {
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) throw std::invalid_argument("filter: drop_fraction outside [0,1)");
  if (corrupted && corrupted->size() != pairs.size()) throw std::invalid_argument("filter: truth flags misaligned");
  const std::size_t n = pairs.size();
  FilterResult out;
  out.scores.resize(n);
  out.flagged.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (pairs[i].source.empty() || pairs[i].target.empty()) {
      out.scores[i] = 1.0;
      out.flagged[i] = true;
    } else {
      out.scores[i] = score(pairs[i]);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
  const auto drop = static_cast<std::size_t>(std::floor(drop_fraction * static_cast<double>(n)));
  out.removed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drop));
  std::vector<bool> is_removed(n, false);
  for (auto i : out.removed) is_removed[i] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_removed[i]) out.kept.push_back(i);
  }

  auto& r = out.report;
  r.total = n;
  r.removed = drop;
  r.flagged = static_cast<std::size_t>(std::count(out.flagged.begin(), out.flagged.end(), true));
  if (corrupted) {
    r.has_truth = true;
    for (std::size_t i = 0; i < n; ++i) {
      const bool bad = (*corrupted)[i];
      if (is_removed[i] && bad) ++r.tp;
      else if (is_removed[i]) ++r.fp;
      else if (bad) ++r.fn;
      else ++r.tn;
    }
    r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  }
  return out;
}

nlohmann::json to_json(const FilterReport& r) {
  nlohmann::json j = {{"total", r.total}, {"removed", r.removed}, {"flagged", r.flagged}};
  if (r.has_truth) {
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["tn"] = r.tn;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
  }
  return j;
}

}  // namespace qe::eval
