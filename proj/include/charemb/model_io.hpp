#pragma once

// CENC0001 checkpoints: magic, u32 header length, JSON header (config and
// char vocabulary), then named tensors as
//   u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data.

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <string>

#include "charemb/binary_io.hpp"
#include "charemb/char_encoder.hpp"
#include "charemb/error.hpp"

namespace charemb {

inline constexpr std::string_view kModelMagic = "CENC0001";

inline nlohmann::json config_to_json(const EncoderConfig& c) {
  return {{"variant", c.variant},       {"char_dim", c.char_dim},
          {"hidden", c.hidden},         {"layers", c.layers},
          {"bidirectional", c.bidirectional},
          {"dropout", c.dropout},       {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"patience", c.patience},
          {"seed", c.seed},             {"k", c.k},
          {"max_len", c.max_len},       {"max_chars", c.max_chars}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.variant = j.at("variant").get<std::string>();
  c.char_dim = j.at("char_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.k = j.at("k").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.max_chars = j.at("max_chars").get<std::size_t>();
  return c;
}

inline std::string model_header(const CharEncoderModel& model) {
  std::vector<std::uint32_t> chars(model.vocab.chars().begin(), model.vocab.chars().end());
  nlohmann::json header = {{"config", config_to_json(model.config)},
                           {"vocab", {{"chars", chars}, {"max_len", model.vocab.max_len()}}},
                           {"num_tensors", model.weights.named().size()}};
  return header.dump();
}

inline void write_model(std::ostream& os, const CharEncoderModel& model) {
  const auto named = model.weights.named();
  const auto text = model_header(model);
  binio::write_bytes(os, kModelMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(text.size()));
  binio::write_bytes(os, text);
  for (const auto& [name, t] : named) {
    binio::write_u32(os, static_cast<std::uint32_t>(name.size()));
    binio::write_bytes(os, name);
    binio::write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
    binio::write_f32(os, t.data());
  }
}

inline CharEncoderModel read_model(std::istream& is) {
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (is.gcount() != 8 || std::string_view(magic, 8) != kModelMagic) {
    throw FormatError("unsupported model version: expected CENC0001 magic");
  }
  const auto hlen = binio::read_u32(is, "header length");
  const auto text = binio::read_string(is, hlen, "header");
  CharEncoderModel model;
  std::size_t num_tensors = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    model.config = config_from_json(header.at("config"));
    const auto& v = header.at("vocab");
    std::vector<char32_t> chars;
    for (auto c : v.at("chars").get<std::vector<std::uint32_t>>()) chars.push_back(c);
    model.vocab = CharVocab(std::move(chars), v.at("max_len").get<std::size_t>());
    num_tensors = header.at("num_tensors").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  model.config.validate();
  std::map<std::string, ad::Tensor<float>> tensors;
  for (std::size_t i = 0; i < num_tensors; ++i) {
    const auto nlen = binio::read_u32(is, "tensor name length");
    auto name = binio::read_string(is, nlen, "tensor name");
    const auto rank = binio::read_u32(is, "tensor rank");
    if (rank < 1 || rank > 2) throw FormatError("tensor '" + name + "' has unsupported rank");
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(binio::read_u32(is, "tensor dims"));
      n *= shape.back();
    }
    std::vector<float> data(n);
    binio::read_f32(is, data, "tensor data");
    tensors.emplace(std::move(name), ad::Tensor<float>::from(std::move(shape), std::move(data), true));
  }
  model.weights = EncoderWeights<float>::assemble(model.config, std::move(tensors), model.vocab.size());
  return model;
}

inline void save_model(const CharEncoderModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write model: " + path);
  write_model(os, model);
  if (!os) throw IoError("error writing model: " + path);
}

inline CharEncoderModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open model: " + path);
  return read_model(is);
}

/// Size of the CENC serialization, without writing it.
inline std::uint64_t serialized_model_bytes(const CharEncoderModel& model) {
  std::uint64_t bytes = kModelMagic.size() + 4 + model_header(model).size();
  for (const auto& [name, t] : model.weights.named()) {
    bytes += 4 + name.size() + 4 + 4 * t.shape().size() + 4 * t.size();
  }
  return bytes;
}

}  // namespace charemb
