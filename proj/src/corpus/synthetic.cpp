#include "qe/corpus/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace qe::corpus {

namespace {

Sentence random_words(std::mt19937_64& rng, std::size_t count, char first_letter, const LanguageConfig& config) {
  std::uniform_int_distribution<std::size_t> length(config.min_word_length, config.max_word_length);
  std::uniform_int_distribution<int> letter(0, 11);
  std::set<std::string> seen;
  Sentence words;
  while (words.size() < count) {
    std::string w;
    const std::size_t n = length(rng);
    for (std::size_t i = 0; i < n; ++i) w.push_back(static_cast<char>(first_letter + letter(rng)));
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

}  // namespace

SyntheticLanguage SyntheticLanguage::generate(const LanguageConfig& config) {
  if (config.words_per_side < 2) throw std::invalid_argument("synthetic language: need at least 2 words per side");
  if (config.min_word_length == 0 || config.min_word_length > config.max_word_length) {
    throw std::invalid_argument("synthetic language: bad word length range");
  }
  std::mt19937_64 rng(config.seed);
  auto source = random_words(rng, config.words_per_side, 'a', config);
  auto target = random_words(rng, config.words_per_side, 'm', config);
  std::vector<std::size_t> perm(config.words_per_side);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return SyntheticLanguage(std::move(source), std::move(target), std::move(perm));
}

SyntheticLanguage::SyntheticLanguage(Sentence source_words, Sentence target_words, std::vector<std::size_t> permutation)
    : source_words_(std::move(source_words)),
      target_words_(std::move(target_words)),
      permutation_(std::move(permutation)) {
  const std::size_t n = source_words_.size();
  if (target_words_.size() != n || permutation_.size() != n) {
    throw std::invalid_argument("synthetic language: word lists and permutation differ in size");
  }
  std::vector<std::size_t> check = permutation_;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (check[i] != i) throw std::invalid_argument("synthetic language: mapping is not a permutation");
  }
  source_index_.resize(n);
  std::iota(source_index_.begin(), source_index_.end(), 0);
  std::sort(source_index_.begin(), source_index_.end(),
            [&](std::size_t a, std::size_t b) { return source_words_[a] < source_words_[b]; });
}

std::size_t SyntheticLanguage::map_index(std::size_t source_index, std::size_t style) const {
  if (style >= style_capacity()) throw std::out_of_range("synthetic language: style out of range");
  return permutation_[(source_index + style) % source_words_.size()];
}

const std::string& SyntheticLanguage::map_word(const std::string& source_word, std::size_t style) const {
  auto it = std::lower_bound(source_index_.begin(), source_index_.end(), source_word,
                             [&](std::size_t i, const std::string& w) { return source_words_[i] < w; });
  if (it == source_index_.end() || source_words_[*it] != source_word) {
    throw std::invalid_argument("synthetic language: unknown source word '" + source_word + "'");
  }
  return target_words_[map_index(*it, style)];
}

Sentence SyntheticLanguage::translate(const Sentence& source, std::size_t style) const {
  Sentence out;
  out.reserve(source.size());
  for (auto it = source.rbegin(); it != source.rend(); ++it) out.push_back(map_word(*it, style));
  return out;
}

std::vector<ParallelPair> gen_parallel(std::uint64_t seed, const ParallelConfig& config,
                                       const SyntheticLanguage& language) {
  if (config.styles == 0) throw std::invalid_argument("gen_parallel: style count must be >= 1");
  if (config.pairs == 0) throw std::invalid_argument("gen_parallel: pair count must be >= 1");
  if (config.styles > language.style_capacity()) {
    throw std::invalid_argument("gen_parallel: " + std::to_string(config.styles) + " styles requested but only " +
                                std::to_string(language.style_capacity()) + " mapping tables exist");
  }
  if (config.min_length == 0 || config.min_length > config.max_length) {
    throw std::invalid_argument("gen_parallel: bad sentence length range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(config.min_length, config.max_length);
  std::uniform_int_distribution<std::size_t> word(0, language.source_words().size() - 1);
  std::uniform_int_distribution<std::size_t> style(0, config.styles - 1);
  std::vector<ParallelPair> pairs;
  pairs.reserve(config.pairs);
  for (std::size_t p = 0; p < config.pairs; ++p) {
    ParallelPair pair;
    const std::size_t n = length(rng);
    for (std::size_t i = 0; i < n; ++i) pair.source.push_back(language.source_words()[word(rng)]);
    pair.style = style(rng);
    pair.target = language.translate(pair.source, *pair.style);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace qe::corpus
