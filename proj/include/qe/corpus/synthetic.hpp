#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qe/corpus/vocabulary.hpp"

namespace qe::corpus {

struct ParallelPair {
  Sentence source;
  Sentence target;
  std::optional<std::size_t> style;
  bool operator==(const ParallelPair&) const = default;
};

struct LanguageConfig {
  std::size_t words_per_side = 24;
  std::size_t min_word_length = 2;
  std::size_t max_word_length = 4;
  std::uint64_t seed = 7;
};

// Toy language pair. Source words are spelled over a-l, target words over m-x.
// Style s maps source word i to target word perm[(i + s) mod n], so every
// style disagrees with every other on every word.
class SyntheticLanguage {
 public:
  static SyntheticLanguage generate(const LanguageConfig& config);
  SyntheticLanguage(Sentence source_words, Sentence target_words, std::vector<std::size_t> permutation);

  const Sentence& source_words() const { return source_words_; }
  const Sentence& target_words() const { return target_words_; }
  const std::vector<std::size_t>& permutation() const { return permutation_; }
  std::size_t style_capacity() const { return source_words_.size(); }

  std::size_t map_index(std::size_t source_index, std::size_t style) const;
  const std::string& map_word(const std::string& source_word, std::size_t style) const;
  // Reverses the sentence and maps every word through the style table.
  Sentence translate(const Sentence& source, std::size_t style) const;

 private:
  Sentence source_words_;
  Sentence target_words_;
  std::vector<std::size_t> permutation_;
  std::vector<std::size_t> source_index_;  // sorted lookup helper
};

struct ParallelConfig {
  std::size_t pairs = 1000;
  std::size_t styles = 3;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
};

// Uniform random source sentences with a uniformly drawn style each.
std::vector<ParallelPair> gen_parallel(std::uint64_t seed, const ParallelConfig& config,
                                       const SyntheticLanguage& language);

}  // namespace qe::corpus
