#include "qe/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <map>
#include <stdexcept>

namespace qe::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (!m.contains("tensors") || !m["tensors"].is_array()) {
    throw std::runtime_error("checkpoint: manifest has no tensor list");
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ParameterSet<float>& params,
                     const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + (dir / "weights.bin").string());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto values = p.tensor.values();
    tensors.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"length", values.size()}});
    bin.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    offset += values.size() * 4;
  }
  if (!bin) throw std::runtime_error("checkpoint: write failed");
  nlohmann::json manifest = {{"format", "qe-checkpoint-1"}, {"meta", meta}, {"tensors", tensors}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir) {
  auto m = read_manifest(dir);
  return m.value("meta", nlohmann::json::object());
}

nlohmann::json load_checkpoint(const std::filesystem::path& dir, ParameterSet<float>& params) {
  auto m = read_manifest(dir);
  std::ifstream bin(dir / "weights.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw std::runtime_error("checkpoint: cannot open " + (dir / "weights.bin").string());
  const auto file_size = static_cast<std::size_t>(bin.tellg());

  std::map<std::string, const nlohmann::json*> by_name;
  std::size_t expected_offset = 0;
  for (const auto& t : m["tensors"]) {
    const auto name = t.at("name").get<std::string>();
    if (t.at("dtype").get<std::string>() != "f32") throw std::runtime_error("checkpoint: " + name + " is not f32");
    const auto shape = t.at("shape").get<Shape>();
    const auto length = t.at("length").get<std::size_t>();
    if (shape_size(shape) != length) throw std::runtime_error("checkpoint: " + name + " length disagrees with shape");
    if (t.at("offset").get<std::size_t>() != expected_offset) {
      throw std::runtime_error("checkpoint: " + name + " offset is not contiguous");
    }
    expected_offset += length * 4;
    if (!by_name.emplace(name, &t).second) throw std::runtime_error("checkpoint: duplicate tensor " + name);
  }
  if (expected_offset != file_size) {
    throw std::runtime_error("checkpoint: weights.bin has " + std::to_string(file_size) + " bytes, manifest needs " +
                             std::to_string(expected_offset));
  }
  if (by_name.size() != params.size()) {
    throw std::runtime_error("checkpoint: manifest has " + std::to_string(by_name.size()) +
                             " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint: tensor " + p.name + " has shape " + shape_str(shape) + ", model expects " +
                               shape_str(p.tensor.shape()));
    }
    auto values = p.tensor.mutable_values();
    bin.seekg(static_cast<std::streamoff>(it->second->at("offset").get<std::size_t>()));
    bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    if (!bin) throw std::runtime_error("checkpoint: short read for " + p.name);
  }
  return m.value("meta", nlohmann::json::object());
}

std::string hash_hex(std::uint64_t hash) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

void check_meta(const nlohmann::json& meta, const std::string& model, std::uint64_t vocab_hash) {
  const auto found = meta.value("model", std::string());
  if (found != model) throw std::runtime_error("checkpoint holds a '" + found + "' model, expected '" + model + "'");
  const auto hash = meta.value("vocab_hash", std::string());
  if (hash != hash_hex(vocab_hash)) {
    throw std::runtime_error("checkpoint vocabulary hash " + hash + " does not match " + hash_hex(vocab_hash));
  }
}

}  // namespace qe::nn
