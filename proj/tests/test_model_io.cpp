#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "siamlite/flops.hpp"
#include "siamlite/model_io.hpp"

using namespace siamlite;
namespace fs = std::filesystem;

namespace {

Model desk_model(std::uint64_t seed) {
  Model m;
  m.spec = build_default_spec(ModelScale::kDesk);
  m.weights = init_weights(m.spec, seed);
  Rng rng(seed);
  for (auto& layer : m.weights.layers)
    for (auto& conv : layer.convs)
      for (auto& v : conv.bias.data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  return m;
}

QuantizedNetwork quantized(const Model& m, int bits) {
  Rng rng(99);
  std::vector<PatchPair> calib;
  for (int i = 0; i < 2; ++i) {
    calib.push_back({oracle::random_tensor<float>(rng, {1, 3, 32, 32}, 0, 1),
                     oracle::random_tensor<float>(rng, {1, 3, 64, 64}, 0, 1)});
  }
  return quantize_network(m, calibrate(m, calib, bits));
}

std::size_t error_offset(const std::string& bytes) {
  try {
    deserialize_model(bytes);
  } catch (const FormatError& e) {
    return e.position();
  }
  return static_cast<std::size_t>(-1);
}

}  // namespace

TEST(ModelIo, FloatRoundTripIsByteIdenticalAndForwardExact) {
  const Model m = desk_model(1);
  const std::string a = serialize_model(m);
  const LoadedModel loaded = deserialize_model(a);
  ASSERT_FALSE(loaded.quantized);
  EXPECT_EQ(loaded.model, m);
  EXPECT_EQ(serialize_model(loaded.model), a);
  EXPECT_EQ(loaded.layout.total(), a.size());
  Rng rng(2);
  const Tensor z = oracle::random_tensor<float>(rng, {1, 3, 32, 32}, 0, 1);
  const Tensor x = oracle::random_tensor<float>(rng, {1, 3, 64, 64}, 0, 1);
  EXPECT_EQ(model_forward(m.spec, m.weights, z, x).cls,
            model_forward(loaded.model.spec, loaded.model.weights, z, x).cls);
}

TEST(ModelIo, FloatSizeIsFourBytesPerParameterPlusHeader) {
  const Model m = desk_model(3);
  const std::string bytes = serialize_model(m);
  const LoadedModel loaded = deserialize_model(bytes);
  const std::size_t params = count_flops(m.spec).parameters;
  EXPECT_EQ(loaded.layout.weight_bytes + loaded.layout.bias_bytes, 4 * params);
  EXPECT_EQ(bytes.size(), 4 * params + loaded.layout.header_bytes + 4);
}

TEST(ModelIo, QuantizedRoundTripIsByteIdentical) {
  const Model m = desk_model(4);
  for (int bits : {8, 16}) {
    const QuantizedNetwork q = quantized(m, bits);
    const std::string a = serialize_model(q);
    const LoadedModel loaded = deserialize_model(a);
    ASSERT_TRUE(loaded.quantized);
    EXPECT_EQ(loaded.qnet, q);
    EXPECT_EQ(serialize_model(loaded.qnet), a);
  }
}

TEST(ModelIo, QuantizedWeightBlobIsQuarterOfFloat) {
  const Model m = desk_model(5);
  const LoadedModel f = deserialize_model(serialize_model(m));
  const LoadedModel q = deserialize_model(serialize_model(quantized(m, 8)));
  EXPECT_EQ(4 * q.layout.weight_bytes, f.layout.weight_bytes);
  EXPECT_EQ(q.layout.bias_bytes, f.layout.bias_bytes);
}

TEST(ModelIo, CorruptionIsRejectedWithOffsets) {
  const std::string good = serialize_model(desk_model(6));
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(error_offset(bad), 0u);
  bad = good;
  bad[4] = 9;
  EXPECT_EQ(error_offset(bad), 4u);
  bad = good;
  bad[20] ^= 0x01;  // inside the header text
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = good;
  bad[good.size() - 10] ^= 0x40;  // inside a blob
  EXPECT_THROW(deserialize_model(bad), FormatError);
  const std::string truncated = good.substr(0, good.size() - 100);
  EXPECT_LE(error_offset(truncated), truncated.size());
  EXPECT_THROW(deserialize_model(good + "x"), FormatError);
  EXPECT_THROW(deserialize_model(""), FormatError);
}

TEST(ModelIo, EveryHeaderByteFlipIsRejected) {
  const std::string good = serialize_model(desk_model(7));
  const std::size_t header = deserialize_model(good).layout.header_bytes;
  for (std::size_t i = 0; i < header; ++i) {
    std::string bad = good;
    bad[i] = static_cast<char>(bad[i] ^ 0x10);
    EXPECT_THROW(deserialize_model(bad), FormatError) << "byte " << i;
  }
}

TEST(ModelIo, FileRoundTrip) {
  const fs::path p = fs::temp_directory_path() / "siamlite_test_model.smlt";
  const Model m = desk_model(8);
  save_model(m, p);
  EXPECT_EQ(load_model(p).model, m);
  EXPECT_THROW(load_model(p.string() + ".missing"), Error);
}
