#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace qe::corpus {

using Sentence = std::vector<std::string>;

// Token <-> id map. Ids are dense from 0 and the specials come first:
//   0 <pad>, 1 </s>, 2 <unk>, 3 <mask>, 4 <lang:src>, 5 <lang:tgt>,
//   6.. <sos:0> ... <sos:K-1>, then ordinary tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kMask = 3;
  static constexpr int kLangSrc = 4;
  static constexpr int kLangTgt = 5;
  static constexpr int kFirstSos = 6;

  explicit Vocabulary(std::size_t expert_count = 1);

  // Rebuilds from a full token list (as written by `tokens()`); the specials
  // must be in canonical order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t expert_count() const { return expert_count_; }
  int sos(std::size_t expert) const;
  bool is_special(int id) const { return id >= 0 && id < kFirstSos + static_cast<int>(expert_count_); }
  int first_regular() const { return kFirstSos + static_cast<int>(expert_count_); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  static std::string sos_token(std::size_t expert) { return "<sos:" + std::to_string(expert) + ">"; }

 private:
  std::size_t expert_count_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace qe::corpus
