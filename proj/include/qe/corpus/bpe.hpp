#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qe/corpus/vocabulary.hpp"

namespace qe::corpus {

using MergeRule = std::pair<std::string, std::string>;

struct MergeTable {
  std::vector<MergeRule> rules;  // applied in order
  bool operator==(const MergeTable&) const = default;
};

// Greedy byte-pair merges over UTF-8 characters. Each round merges the most
// frequent adjacent pair; ties go to the lexicographically smallest pair.
// Stops early when no pair remains.
MergeTable train_bpe(const std::map<std::string, std::size_t>& word_counts, std::size_t num_merges);

struct Segmentation {
  std::vector<std::string> pieces;
  std::vector<int> word_index;  // parent word of each piece
};

// Pieces of one word; their concatenation is the word.
Segmentation segment(const std::string& word, const MergeTable& merges, int word_index = 0);
Segmentation segment_sentence(const Sentence& words, const MergeTable& merges);

std::vector<std::string> utf8_chars(const std::string& word);

// Continuation marker carried by every non-final piece of a word in the
// vocabulary, so subword ids decode back to words.
inline constexpr const char* kContinuation = "@@";

struct EncodedSentence {
  std::vector<int> ids;
  std::vector<int> word_index;
  std::size_t words = 0;
};

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(MergeTable merges, Vocabulary vocab) : merges_(std::move(merges)), vocab_(std::move(vocab)) {}

  // Merges from the word counts; vocabulary holds the specials, then every
  // marked piece seen when segmenting the training words, sorted.
  static Tokenizer train(const std::map<std::string, std::size_t>& word_counts, std::size_t num_merges,
                         std::size_t expert_count);

  EncodedSentence encode(const Sentence& words) const;
  // Specials are skipped; a piece without the marker closes a word.
  Sentence decode(const std::vector<int>& ids) const;

  const MergeTable& merges() const { return merges_; }
  const Vocabulary& vocab() const { return vocab_; }

 private:
  MergeTable merges_;
  Vocabulary vocab_;
};

std::map<std::string, std::size_t> word_counts(const std::vector<Sentence>& sentences);

// merges.txt holds one "left right" rule per line in merge order, vocab.txt
// one token per line in id order.
void save_tokenizer(const std::filesystem::path& dir, const Tokenizer& tokenizer);
Tokenizer load_tokenizer(const std::filesystem::path& dir);

}  // namespace qe::corpus
