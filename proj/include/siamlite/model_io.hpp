#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "siamlite/compression.hpp"
#include "siamlite/network.hpp"

namespace siamlite {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Byte accounting of a model file.
struct ModelFileLayout {
  std::size_t header_bytes = 0;    // magic, version, text length, text
  std::size_t weight_bytes = 0;    // f32 weights or weight codes
  std::size_t bias_bytes = 0;      // f32 biases
  std::size_t qparam_bytes = 0;    // QuantParams records
  std::size_t trailer_bytes = 0;   // CRC32
  std::size_t total() const {
    return header_bytes + weight_bytes + bias_bytes + qparam_bytes + trailer_bytes;
  }
};

struct LoadedModel {
  bool quantized = false;
  Model model;             // valid when !quantized
  QuantizedNetwork qnet;   // valid when quantized
  ModelFileLayout layout;

  const NetworkSpec& spec() const { return quantized ? qnet.spec : model.spec; }
};

/// Layout: "SMLT", u32 LE version, u32 LE text length, UTF-8 text (key=value
/// lines and one `layer=` line per LayerSpec), blobs, u32 LE CRC32 of all
/// preceding bytes. Float blobs are weight then bias per conv in declaration
/// order. Quantized files hold all f32 biases, then all codes (1 byte each at
/// 8 bits, 2 at 16), then weight and activation QuantParams records.
std::string serialize_model(const Model& model);
std::string serialize_model(const QuantizedNetwork& qnet);

/// Throws FormatError with the byte offset of the first bad field.
LoadedModel deserialize_model(std::string_view bytes);

void save_model(const Model& model, const std::filesystem::path& path);
void save_model(const QuantizedNetwork& qnet, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace siamlite
