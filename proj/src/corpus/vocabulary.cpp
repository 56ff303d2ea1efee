#include "qe/corpus/vocabulary.hpp"

#include <stdexcept>

namespace qe::corpus {

namespace {
const std::vector<std::string> kFixedSpecials = {"<pad>", "</s>", "<unk>", "<mask>", "<lang:src>", "<lang:tgt>"};
}

Vocabulary::Vocabulary(std::size_t expert_count) : expert_count_(expert_count) {
  if (expert_count == 0) throw std::invalid_argument("vocabulary: expert count must be >= 1");
  for (const auto& s : kFixedSpecials) add(s);
  for (std::size_t k = 0; k < expert_count; ++k) add(sos_token(k));
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  std::size_t experts = 0;
  while (kFirstSos + experts < tokens.size() && tokens[kFirstSos + experts] == sos_token(experts)) ++experts;
  if (experts == 0) throw std::invalid_argument("vocabulary: token list has no <sos:0> entry");
  Vocabulary v(experts);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (tokens.size() <= i || tokens[i] != v.tokens_[i]) {
      throw std::invalid_argument("vocabulary: special token " + std::to_string(i) + " out of canonical order");
    }
  }
  for (std::size_t i = v.size(); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw std::invalid_argument("vocabulary: duplicate token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

int Vocabulary::sos(std::size_t expert) const {
  if (expert >= expert_count_) {
    throw std::out_of_range("vocabulary: expert " + std::to_string(expert) + " >= " + std::to_string(expert_count_));
  }
  return kFirstSos + static_cast<int>(expert);
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace qe::corpus
