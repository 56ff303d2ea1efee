#include "qe/features/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace qe::features {

namespace {

constexpr double kLogFloor = -27.631021115928547;  // log(1e-12)

double floored_log(double p) { return p > 0.0 ? std::max(std::log(p), kLogFloor) : kLogFloor; }

std::span<const float> embedding_row(const nn::Tensor<float>& table, int id) {
  const std::size_t d = table.cols();
  return table.values().subspan(static_cast<std::size_t>(id) * d, d);
}

void write_product(std::span<float> out, std::span<const float> z, std::span<const float> e) {
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = z[j] * e[j];
}

void write_slot(std::span<float> slot, std::span<const float> f_model, std::span<const float> f_dual,
                const std::array<double, 4>& mm) {
  const std::size_t d = f_model.size();
  std::copy(f_model.begin(), f_model.end(), slot.begin());
  std::copy(f_dual.begin(), f_dual.end(), slot.begin() + static_cast<std::ptrdiff_t>(d));
  for (std::size_t j = 0; j < 4; ++j) slot[2 * d + j] = static_cast<float>(mm[j]);
}

void check_ids(const corpus::EncodedSentence& mt, std::size_t vocab_size) {
  if (mt.ids.empty()) throw std::invalid_argument("features: empty MT sentence");
  if (mt.word_index.size() != mt.ids.size()) throw std::invalid_argument("features: word_index size mismatch");
  for (int id : mt.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw std::out_of_range("features: token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
}

}  // namespace

std::array<double, 4> mismatch_features(std::span<const double> dist, int y_mt) {
  if (y_mt < 0 || static_cast<std::size_t>(y_mt) >= dist.size()) {
    throw std::out_of_range("mismatch_features: token id outside the distribution");
  }
  // max_element returns the first maximum, i.e. the lowest id.
  const auto y_max = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  const double lp_mt = floored_log(dist[static_cast<std::size_t>(y_mt)]);
  const double lp_max = floored_log(dist[y_max]);
  return {lp_mt, lp_max, lp_mt - lp_max, static_cast<std::size_t>(y_mt) == y_max ? 1.0 : 0.0};
}

std::vector<float> model_feature(std::span<const float> z, std::span<const float> e) {
  if (z.size() != e.size()) {
    throw std::invalid_argument("feature: state has " + std::to_string(z.size()) + " values, embedding has " +
                                std::to_string(e.size()));
  }
  std::vector<float> out(z.size());
  write_product(out, z, e);
  return out;
}

TokenFeatures assemble_nmt_features(const nmt::DualNmt& model, const TokenIds& source,
                                    const corpus::EncodedSentence& mt, bool include_dual) {
  check_ids(mt, model.vocab_size());
  nn::NoGradGuard guard;
  const std::size_t d = model.config().model_dim;
  const std::size_t k = model.config().experts;
  const std::size_t n = mt.ids.size();
  const std::size_t V = model.vocab_size();
  const auto& table = model.embedding();

  auto experts = model.teacher_forced_all(nmt::Direction::primal, source, mt.ids);

  // Target-only encoding; rows 0..n-1 line up with the MT tokens, the EOS row is dropped.
  FeatureMatrix dual(n, d);
  if (include_dual) {
    auto enc = model.encode(model.encoder_b(), {mt.ids});
    auto states = enc.states.values();
    for (std::size_t i = 0; i < n; ++i) {
      write_product(dual.row(i), states.subspan(i * d, d), embedding_row(table, mt.ids[i]));
    }
  }

  TokenFeatures out{FeatureMatrix(n, feature_width(k, d)), mt.word_index, mt.words};
  std::vector<float> f_model(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto e = embedding_row(table, mt.ids[i]);
    for (std::size_t z = 0; z < k; ++z) {
      const auto& tf = experts[z];
      write_product(f_model, std::span<const float>(tf.states).subspan(i * d, d), e);
      auto mm = mismatch_features(std::span<const double>(tf.probs).subspan(i * V, V), mt.ids[i]);
      write_slot(out.matrix.row(i).subspan(z * slot_width(d), slot_width(d)), f_model, dual.row(i), mm);
    }
  }
  return out;
}

TokenFeatures assemble_xlm_features(const xlm::Xlm& model, std::size_t experts, const TokenIds& source,
                                    const corpus::EncodedSentence& mt) {
  check_ids(mt, model.vocab_size());
  if (experts == 0) throw std::invalid_argument("assemble_xlm_features: expert count must be positive");
  const std::size_t d = model.config().model_dim;
  const std::size_t n = mt.ids.size();
  const std::size_t V = model.vocab_size();
  auto view = xlm::target_states_and_distributions(model, {source, mt.ids});

  TokenFeatures out{FeatureMatrix(n, feature_width(experts, d)), mt.word_index, mt.words};
  std::vector<float> f_model(d);
  for (std::size_t i = 0; i < n; ++i) {
    write_product(f_model, std::span<const float>(view.states).subspan(i * d, d),
                  embedding_row(model.embedding(), mt.ids[i]));
    auto mm = mismatch_features(std::span<const double>(view.probs).subspan(i * V, V), mt.ids[i]);
    auto row = out.matrix.row(i);
    write_slot(row.first(slot_width(d)), f_model, f_model, mm);
    for (std::size_t z = 1; z < experts; ++z) {
      std::copy_n(row.begin(), slot_width(d), row.begin() + static_cast<std::ptrdiff_t>(z * slot_width(d)));
    }
  }
  return out;
}

FeatureMatrix pool_words(const TokenFeatures& tokens) {
  const auto& m = tokens.matrix;
  if (tokens.word_index.size() != m.rows) throw std::invalid_argument("pool_words: word_index size mismatch");
  FeatureMatrix out(tokens.words, m.cols);
  std::vector<std::size_t> counts(tokens.words, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const int w = tokens.word_index[r];
    if (w < 0 || static_cast<std::size_t>(w) >= tokens.words) throw std::out_of_range("pool_words: bad word index");
    auto dst = out.row(static_cast<std::size_t>(w));
    auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) dst[c] += src[c];
    ++counts[static_cast<std::size_t>(w)];
  }
  for (std::size_t w = 0; w < tokens.words; ++w) {
    if (counts[w] == 0) throw std::invalid_argument("pool_words: word " + std::to_string(w) + " has no tokens");
    const float inv = 1.0f / static_cast<float>(counts[w]);
    for (auto& v : out.row(w)) v *= inv;
  }
  return out;
}

FeatureMatrix gap_features(const FeatureMatrix& words) {
  if (words.rows == 0) throw std::invalid_argument("gap_features: sentence has no words");
  FeatureMatrix out(words.rows + 1, words.cols);
  auto first = words.row(0);
  auto last = words.row(words.rows - 1);
  std::copy(first.begin(), first.end(), out.row(0).begin());
  std::copy(last.begin(), last.end(), out.row(words.rows).begin());
  for (std::size_t g = 1; g < words.rows; ++g) {
    auto a = words.row(g - 1);
    auto b = words.row(g);
    auto dst = out.row(g);
    for (std::size_t c = 0; c < words.cols; ++c) dst[c] = 0.5f * (a[c] + b[c]);
  }
  return out;
}

void save_feature_cache(const std::filesystem::path& dir, const std::vector<SampleFeatures>& samples,
                        const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "features.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("feature cache: cannot write " + (dir / "features.bin").string());
  nlohmann::json records = nlohmann::json::array();
  std::size_t offset = 0;
  auto put = [&](std::size_t sample, const char* stream, const TokenFeatures& t) {
    const auto& m = t.matrix;
    records.push_back({{"sample", sample},
                       {"stream", stream},
                       {"words", t.words},
                       {"word_index", t.word_index},
                       {"shape", {m.rows, m.cols}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"length", m.values.size()}});
    bin.write(reinterpret_cast<const char*>(m.values.data()), static_cast<std::streamsize>(m.values.size() * 4));
    offset += m.values.size() * 4;
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    put(i, "nmt", samples[i].nmt);
    if (samples[i].xlm) put(i, "xlm", *samples[i].xlm);
  }
  if (!bin) throw std::runtime_error("feature cache: write failed");
  nlohmann::json manifest = {
      {"format", "qe-features-1"}, {"meta", meta}, {"samples", samples.size()}, {"tensors", records}};
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
}

std::vector<SampleFeatures> load_feature_cache(const std::filesystem::path& dir, nlohmann::json* meta) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("feature cache: cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("feature cache: malformed manifest: " + std::string(e.what()));
  }
  if (m.value("format", std::string()) != "qe-features-1") throw std::runtime_error("feature cache: unknown format");
  std::ifstream bin(dir / "features.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw std::runtime_error("feature cache: cannot open " + (dir / "features.bin").string());
  const auto file_size = static_cast<std::size_t>(bin.tellg());

  std::vector<SampleFeatures> out(m.at("samples").get<std::size_t>());
  std::vector<bool> has_nmt(out.size(), false);
  std::size_t expected_offset = 0;
  for (const auto& t : m.at("tensors")) {
    const auto sample = t.at("sample").get<std::size_t>();
    const auto stream = t.at("stream").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    const auto length = t.at("length").get<std::size_t>();
    if (sample >= out.size()) throw std::runtime_error("feature cache: sample index out of range");
    if (t.at("dtype").get<std::string>() != "f32" || shape.size() != 2 || shape[0] * shape[1] != length) {
      throw std::runtime_error("feature cache: bad record for sample " + std::to_string(sample));
    }
    if (t.at("offset").get<std::size_t>() != expected_offset) {
      throw std::runtime_error("feature cache: offsets are not contiguous");
    }
    if (expected_offset + length * 4 > file_size) throw std::runtime_error("feature cache: features.bin truncated");
    TokenFeatures f{FeatureMatrix(shape[0], shape[1]), t.at("word_index").get<std::vector<int>>(),
                    t.at("words").get<std::size_t>()};
    if (f.word_index.size() != shape[0]) throw std::runtime_error("feature cache: word_index size mismatch");
    bin.seekg(static_cast<std::streamoff>(expected_offset));
    bin.read(reinterpret_cast<char*>(f.matrix.values.data()), static_cast<std::streamsize>(length * 4));
    if (!bin) throw std::runtime_error("feature cache: short read");
    expected_offset += length * 4;
    if (stream == "nmt") {
      out[sample].nmt = std::move(f);
      has_nmt[sample] = true;
    } else if (stream == "xlm") {
      out[sample].xlm = std::move(f);
    } else {
      throw std::runtime_error("feature cache: unknown stream " + stream);
    }
  }
  if (expected_offset != file_size) throw std::runtime_error("feature cache: features.bin size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!has_nmt[i]) throw std::runtime_error("feature cache: sample " + std::to_string(i) + " has no nmt record");
  }
  if (meta) *meta = m.value("meta", nlohmann::json::object());
  return out;
}

}  // namespace qe::features
