#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qe/corpus/synthetic.hpp"

namespace qe::corpus {

enum class Tag : std::uint8_t { ok = 0, bad = 1 };

const char* tag_name(Tag t);
Tag parse_tag(const std::string& s);  // "OK" or "BAD"

struct QESample {
  Sentence source;
  Sentence mt;
  Sentence pe;  // empty when no post-edit is available
  std::vector<Tag> word_tags;  // |mt|
  std::vector<Tag> gap_tags;   // |mt| + 1; gap i sits before mt word i
  double hter = 0.0;
  bool operator==(const QESample&) const = default;
};

struct CorruptionRates {
  double substitute = 0.0;
  double remove = 0.0;
  double insert = 0.0;
};

struct Corruption {
  Sentence mt;
  std::vector<Tag> word_tags;
  std::vector<Tag> gap_tags;
};

// Walks pe left to right. Before each word an extra pool word is inserted
// (BAD) with probability `insert`; the word itself is then substituted by a
// different pool word (BAD), dropped (the gap at that point becomes BAD) or
// kept (OK). An mt that would come out empty gets one inserted BAD word.
Corruption corrupt(const Sentence& pe, const CorruptionRates& rates, const Sentence& pool, std::uint64_t seed);

// Word-level Levenshtein distance, unit costs.
std::size_t edit_distance(const Sentence& a, const Sentence& b);

// edit_distance(mt, pe) / |mt|, clamped to [0, 1].
double compute_hter(const Sentence& mt, const Sentence& pe);

struct CorruptionConfig {
  CorruptionRates rates{0.15, 0.05, 0.05};
  // Scale each sample's rates by 2u, u ~ U(0,1), so the dataset spans clean
  // and heavily damaged sentences at the same mean rate.
  bool vary_severity = true;
  double train_fraction = 0.70;
  double dev_fraction = 0.15;
};

struct QEDataset {
  std::vector<QESample> train;
  std::vector<QESample> dev;
  std::vector<QESample> test;
};

// pe := target. HTER is rounded to 4 decimals, the precision stored on disk.
// Splits are contiguous in input order.
QEDataset make_qe_dataset(const std::vector<ParallelPair>& pairs, const CorruptionConfig& config, const Sentence& pool,
                          std::uint64_t seed);

struct SplitStats {
  std::size_t samples = 0;
  double avg_source_length = 0.0;
  double avg_mt_length = 0.0;
  double avg_hter = 0.0;
  double min_hter = 0.0;
  double max_hter = 0.0;
  double bad_word_ratio = 0.0;  // over all word tags
  double bad_gap_ratio = 0.0;   // over all gap tags
};

SplitStats split_stats(const std::vector<QESample>& samples);

// Throws std::invalid_argument on tag count mismatches or hter out of range.
void validate_sample(const QESample& s);

// Directory of src.txt, mt.txt, pe.txt (only when every sample has one),
// hter.txt, word_tags.txt and gap_tags.txt.
void save_qe_files(const std::filesystem::path& dir, const std::vector<QESample>& samples);
std::vector<QESample> load_qe_files(const std::filesystem::path& dir);

// src.txt, tgt.txt and, when every pair has a style, style.txt.
void save_parallel(const std::filesystem::path& dir, const std::vector<ParallelPair>& pairs);
std::vector<ParallelPair> load_parallel(const std::filesystem::path& dir);

// One line per sentence, tokens split on spaces, trailing CR removed.
std::vector<Sentence> read_sentences(const std::filesystem::path& file);
void write_sentences(const std::filesystem::path& file, const std::vector<Sentence>& sentences);
std::vector<std::string> read_lines(const std::filesystem::path& file);
Sentence split_words(const std::string& line);
std::string join_words(const Sentence& words);

}  // namespace qe::corpus
