#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "qe/nn/layers.hpp"

namespace qe::nn {

// Directory holding manifest.json and weights.bin. The manifest lists every
// tensor as {name, shape, dtype "f32", offset (bytes), length (elements)} in
// file order next to a caller-provided "meta" object. weights.bin is the
// little-endian float32 concatenation.
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet<float>& params,
                     const nlohmann::json& meta);

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

// Fills an already constructed parameter set. Every parameter must appear
// with an equal shape and the manifest may not carry extra tensors.
// Returns the meta object.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, ParameterSet<float>& params);

std::string hash_hex(std::uint64_t hash);
// Throws std::runtime_error unless meta.model == model and meta.vocab_hash
// matches.
void check_meta(const nlohmann::json& meta, const std::string& model, std::uint64_t vocab_hash);

}  // namespace qe::nn
