#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "qe/nmt/dual_nmt.hpp"
#include "qe/xlm/xlm.hpp"

namespace qe::features {

using nmt::TokenIds;

// Row-major float matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}
  std::span<float> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// One row per target subword, word_index[r] is the MT word it belongs to.
struct TokenFeatures {
  FeatureMatrix matrix;
  std::vector<int> word_index;
  std::size_t words = 0;
};

// {log p(y_mt), log p(y_max), their difference, 1 if y_mt is the argmax}.
// Ties go to the lowest id, log(0) is floored at log(1e-12).
std::array<double, 4> mismatch_features(std::span<const double> dist, int y_mt);

std::vector<float> model_feature(std::span<const float> z, std::span<const float> e);
inline std::vector<float> dual_feature(std::span<const float> z, std::span<const float> e) {
  return model_feature(z, e);
}

constexpr std::size_t slot_width(std::size_t dim) { return 2 * dim + 4; }
constexpr std::size_t feature_width(std::size_t experts, std::size_t dim) { return experts * slot_width(dim); }

// Slot layout per expert: [f_model (d) | f_dual (d) | f_mm (4)].
// include_dual=false zero-fills the f_dual block and keeps the width.
TokenFeatures assemble_nmt_features(const nmt::DualNmt& model, const TokenIds& source,
                                    const corpus::EncodedSentence& mt, bool include_dual = true);

// The single XLM slot has f_dual == f_model and is tiled `experts` times.
TokenFeatures assemble_xlm_features(const xlm::Xlm& model, std::size_t experts, const TokenIds& source,
                                    const corpus::EncodedSentence& mt);

// Mean of each word's subword rows. Every word must own at least one row.
FeatureMatrix pool_words(const TokenFeatures& tokens);

// words+1 rows: inner gaps average their two neighbours, boundary gaps copy
// the single adjacent word.
FeatureMatrix gap_features(const FeatureMatrix& words);

struct SampleFeatures {
  TokenFeatures nmt;
  std::optional<TokenFeatures> xlm;
};

// Feature cache in the checkpoint layout: manifest.json with one record per
// sample and stream, features.bin with the float32 data.
void save_feature_cache(const std::filesystem::path& dir, const std::vector<SampleFeatures>& samples,
                        const nlohmann::json& meta);
std::vector<SampleFeatures> load_feature_cache(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

}  // namespace qe::features
