#include "qe/corpus/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include "qe/corpus/qe_data.hpp"

namespace qe::corpus {

std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

void apply_rule(std::vector<std::string>& symbols, const MergeRule& rule) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < symbols.size(); ++w) {
    if (r + 1 < symbols.size() && symbols[r] == rule.first && symbols[r + 1] == rule.second) {
      symbols[w] = symbols[r] + symbols[r + 1];
      r += 2;
    } else {
      if (w != r) symbols[w] = std::move(symbols[r]);
      ++r;
    }
  }
  symbols.resize(w);
}

}  // namespace

MergeTable train_bpe(const std::map<std::string, std::size_t>& word_counts, std::size_t num_merges) {
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [word, count] : word_counts) {
    if (!word.empty() && count > 0) words.emplace_back(utf8_chars(word), count);
  }
  MergeTable table;
  for (std::size_t m = 0; m < num_merges; ++m) {
    std::map<MergeRule, std::size_t> pairs;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += count;
    }
    if (pairs.empty()) break;
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    table.rules.push_back(best->first);
    for (auto& entry : words) apply_rule(entry.first, best->first);
  }
  return table;
}

Segmentation segment(const std::string& word, const MergeTable& merges, int word_index) {
  if (word.empty()) throw std::invalid_argument("segment: empty word");
  auto symbols = utf8_chars(word);
  for (const auto& rule : merges.rules) {
    if (symbols.size() == 1) break;
    apply_rule(symbols, rule);
  }
  Segmentation s;
  s.word_index.assign(symbols.size(), word_index);
  s.pieces = std::move(symbols);
  return s;
}

Segmentation segment_sentence(const Sentence& words, const MergeTable& merges) {
  Segmentation out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    auto s = segment(words[w], merges, static_cast<int>(w));
    out.pieces.insert(out.pieces.end(), s.pieces.begin(), s.pieces.end());
    out.word_index.insert(out.word_index.end(), s.word_index.begin(), s.word_index.end());
  }
  return out;
}

namespace {

std::vector<std::string> marked_pieces(const Segmentation& s) {
  std::vector<std::string> out(s.pieces.size());
  for (std::size_t i = 0; i < s.pieces.size(); ++i) {
    const bool last = i + 1 == s.pieces.size() || s.word_index[i + 1] != s.word_index[i];
    out[i] = last ? s.pieces[i] : s.pieces[i] + kContinuation;
  }
  return out;
}

bool ends_with_marker(const std::string& t) {
  const std::string marker = kContinuation;
  return t.size() > marker.size() && t.compare(t.size() - marker.size(), marker.size(), marker) == 0;
}

}  // namespace

Tokenizer Tokenizer::train(const std::map<std::string, std::size_t>& word_counts, std::size_t num_merges,
                           std::size_t expert_count) {
  MergeTable merges = train_bpe(word_counts, num_merges);
  std::set<std::string> pieces;
  for (const auto& [word, count] : word_counts) {
    if (word.empty() || count == 0) continue;
    for (auto& p : marked_pieces(segment(word, merges))) pieces.insert(std::move(p));
  }
  Vocabulary vocab(expert_count);
  for (const auto& p : pieces) vocab.add(p);
  return Tokenizer(std::move(merges), std::move(vocab));
}

EncodedSentence Tokenizer::encode(const Sentence& words) const {
  const auto seg = segment_sentence(words, merges_);
  EncodedSentence out;
  out.ids = vocab_.encode(marked_pieces(seg));
  out.word_index = seg.word_index;
  out.words = words.size();
  return out;
}

Sentence Tokenizer::decode(const std::vector<int>& ids) const {
  Sentence words;
  std::string current;
  const std::size_t marker = std::string(kContinuation).size();
  for (int id : ids) {
    if (vocab_.is_special(id)) continue;
    const auto& t = vocab_.token(id);
    if (ends_with_marker(t)) {
      current += t.substr(0, t.size() - marker);
    } else {
      words.push_back(current + t);
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

std::map<std::string, std::size_t> word_counts(const std::vector<Sentence>& sentences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  return counts;
}

void save_tokenizer(const std::filesystem::path& dir, const Tokenizer& tokenizer) {
  std::filesystem::create_directories(dir);
  std::ofstream merges(dir / "merges.txt");
  for (const auto& rule : tokenizer.merges().rules) merges << rule.first << ' ' << rule.second << '\n';
  std::ofstream vocab(dir / "vocab.txt");
  for (const auto& t : tokenizer.vocab().tokens()) vocab << t << '\n';
  if (!merges || !vocab) throw std::runtime_error("cannot write tokenizer to " + dir.string());
}

Tokenizer load_tokenizer(const std::filesystem::path& dir) {
  MergeTable merges;
  const auto lines = read_lines(dir / "merges.txt");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto parts = split_words(lines[i]);
    if (parts.size() != 2) {
      throw std::runtime_error((dir / "merges.txt").string() + ": line " + std::to_string(i + 1) +
                               " is not a merge pair");
    }
    merges.rules.push_back({parts[0], parts[1]});
  }
  return Tokenizer(std::move(merges), Vocabulary::from_tokens(read_lines(dir / "vocab.txt")));
}

}  // namespace qe::corpus
