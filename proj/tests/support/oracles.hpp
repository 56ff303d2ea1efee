#pragma once

// Reference implementations written independently of the library code,
// shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qe/corpus/qe_data.hpp"

namespace qe::oracle {

using corpus::Sentence;
using corpus::Tag;

// Memoised recursive Levenshtein, independent of the iterative library version.
inline std::size_t oracle_distance(const Sentence& a, const Sentence& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
    best = std::min(best, d(i - 1, j) + 1);
    best = std::min(best, d(i, j - 1) + 1);
    return memo[key] = best;
  };
  return d(a.size(), b.size());
}

// Tags recovered from a minimum-cost alignment of mt against pe. Matches are
// OK, substituted or extra mt words BAD, missing pe words mark their gap BAD.
inline std::pair<std::vector<Tag>, std::vector<Tag>> oracle_tags(const Sentence& mt, const Sentence& pe) {
  const std::size_t n = mt.size(), m = pe.size();
  std::vector<std::vector<std::size_t>> D(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) D[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) D[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      D[i][j] = std::min({D[i - 1][j - 1] + (mt[i - 1] == pe[j - 1] ? 0 : 1), D[i - 1][j] + 1, D[i][j - 1] + 1});
  std::vector<Tag> words(n, Tag::ok), gaps(n + 1, Tag::ok);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && D[i][j] == D[i - 1][j - 1] + (mt[i - 1] == pe[j - 1] ? 0 : 1)) {
      if (mt[i - 1] != pe[j - 1]) words[i - 1] = Tag::bad;
      --i;
      --j;
    } else if (i > 0 && D[i][j] == D[i - 1][j] + 1) {
      words[i - 1] = Tag::bad;
      --i;
    } else {
      gaps[i] = Tag::bad;
      --j;
    }
  }
  return {words, gaps};
}

// Single-pass raw-moment form, in long double.
inline double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  long double n = static_cast<long double>(a.size()), sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += static_cast<long double>(a[i]) * a[i];
    sbb += static_cast<long double>(b[i]) * b[i];
    sab += static_cast<long double>(a[i]) * b[i];
  }
  return static_cast<double>((n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb)));
}

inline std::pair<double, double> oracle_mae_rmse(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> abs_err, sq_err;
  for (std::size_t i = 0; i < a.size(); ++i) {
    abs_err.push_back(std::fabs(b[i] - a[i]));
    sq_err.push_back((b[i] - a[i]) * (b[i] - a[i]));
  }
  std::sort(abs_err.begin(), abs_err.end());
  std::sort(sq_err.begin(), sq_err.end());
  long double s1 = 0, s2 = 0;
  for (double v : abs_err) s1 += v;
  for (double v : sq_err) s2 += v;
  return {static_cast<double>(s1 / a.size()), static_cast<double>(std::sqrt(s2 / a.size()))};
}

// Phi coefficient from marginal rates; 0 when a marginal is degenerate.
inline double oracle_mcc(const std::vector<Tag>& gold, const std::vector<Tag>& pred) {
  const double n = static_cast<double>(gold.size());
  double g = 0, p = 0, both = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    g += gold[i] == Tag::bad;
    p += pred[i] == Tag::bad;
    both += gold[i] == Tag::bad && pred[i] == Tag::bad;
  }
  g /= n;
  p /= n;
  both /= n;
  const double denom = g * (1 - g) * p * (1 - p);
  if (denom == 0) return 0.0;
  return (both - g * p) / std::sqrt(denom);
}

// Harmonic mean of precision and recall for one class; 0 when undefined.
inline double oracle_f1(const std::vector<Tag>& gold, const std::vector<Tag>& pred, Tag cls) {
  double hit = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    hit += gold[i] == cls && pred[i] == cls;
    predicted += pred[i] == cls;
    actual += gold[i] == cls;
  }
  if (hit == 0) return 0.0;
  const double precision = hit / predicted, recall = hit / actual;
  return 2 * precision * recall / (precision + recall);
}

// n-gram counts by linear scans over the sentences themselves.
inline double oracle_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, std::size_t max_n = 4) {
  auto count_in = [](const Sentence& s, const Sentence& s_gram_src, std::size_t at, std::size_t n) {
    std::size_t c = 0;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      bool eq = true;
      for (std::size_t k = 0; k < n && eq; ++k) eq = s[i + k] == s_gram_src[at + k];
      c += eq;
    }
    return c;
  };
  double log_p = 0;
  std::size_t hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hl += hyps[s].size();
    rl += refs[s].size();
  }
  for (std::size_t n = 1; n <= max_n; ++n) {
    double clipped = 0, total = 0;
    for (std::size_t s = 0; s < hyps.size(); ++s) {
      const auto& h = hyps[s];
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        total += 1;
        // Each occurrence after the clip limit contributes nothing.
        std::size_t seen_before = 0;
        for (std::size_t j = 0; j < i; ++j) {
          bool eq = true;
          for (std::size_t k = 0; k < n && eq; ++k) eq = h[j + k] == h[i + k];
          seen_before += eq;
        }
        if (seen_before < count_in(refs[s], h, i, n)) clipped += 1;
      }
    }
    if (clipped == 0) return 0.0;
    log_p += std::log(clipped / total);
  }
  const double bp = hl >= rl ? 1.0 : std::exp(1.0 - static_cast<double>(rl) / static_cast<double>(hl));
  return bp * std::exp(log_p / static_cast<double>(max_n));
}

}  // namespace qe::oracle
