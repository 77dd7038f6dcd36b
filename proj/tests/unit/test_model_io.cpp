#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "clp/errors.hpp"
#include "clp/model_io.hpp"
#include "clp/models.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clp;

namespace {

std::size_t manifest_end(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + 8, 4);
  return 12 + len;
}

std::size_t offset_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_model(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no FormatError";
  return 0;
}

}  // namespace

TEST(Clpw, RoundTripIsExact) {
  ModelGraph m = fixture::small_cnn(1);
  EXPECT_EQ(deserialize_model(serialize_model(m)), m);
}

TEST(Clpw, RoundTripResidualAndProjection) {
  ModelGraph t = make_tinynet({3, 8, 8}, 5, 3);
  fixture::randomize(t, 4);
  EXPECT_EQ(deserialize_model(serialize_model(t)), t);
  ModelGraph r = make_resnet18({3, 8, 8}, 3, 2);
  EXPECT_EQ(deserialize_model(serialize_model(r)), r);
}

TEST(Clpw, RoundTripThroughFile) {
  ModelGraph m = fixture::small_cnn(2);
  auto path = std::filesystem::temp_directory_path() / "clp_test_roundtrip.clpw";
  save_model(m, path);
  EXPECT_EQ(load_model(path), m);
  std::filesystem::remove(path);
}

TEST(Clpw, UnusualFloatsSurvive) {
  ModelGraph m = fixture::small_cnn(3);
  auto& c = m.mutable_layer(0).as<Conv>();
  c.weight[0] = 1e-40f;  // subnormal
  c.weight[1] = -0.0f;
  m.mutable_layer(1).as<BatchNorm>().epsilon = 1.2345678e-3f;
  ModelGraph back = deserialize_model(serialize_model(m));
  EXPECT_EQ(back.layer(0).as<Conv>().weight[0], 1e-40f);
  EXPECT_TRUE(std::signbit(back.layer(0).as<Conv>().weight[1]));
  EXPECT_EQ(back.layer(1).as<BatchNorm>().epsilon, 1.2345678e-3f);
}

TEST(Clpw, ManifestIsReadableText) {
  std::string text = model_manifest(fixture::small_cnn(4));
  EXPECT_NE(text.find("input 2 6 6\n"), std::string::npos);
  EXPECT_NE(text.find("classes 3\n"), std::string::npos);
  EXPECT_NE(text.find("conv stride=2 padding=1 weight=5x4x3x3 bias=5\n"), std::string::npos);
}

TEST(Clpw, BadMagic) {
  auto bytes = serialize_model(fixture::small_cnn(5));
  bytes[0] = 'X';
  EXPECT_EQ(offset_of(bytes), 0u);
}

TEST(Clpw, BadVersion) {
  auto bytes = serialize_model(fixture::small_cnn(5));
  bytes[4] = 2;
  EXPECT_EQ(offset_of(bytes), 4u);
}

TEST(Clpw, TruncatedAnywhereIsFormatError) {
  auto bytes = serialize_model(fixture::small_cnn(6));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, manifest_end(bytes) - 1,
                          manifest_end(bytes) + 5, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(deserialize_model(part), FormatError) << cut;
  }
}

TEST(Clpw, TrailingBytesRejected) {
  auto bytes = serialize_model(fixture::small_cnn(7));
  bytes.push_back(0);
  EXPECT_EQ(offset_of(bytes), bytes.size() - 1);
}

TEST(Clpw, UnknownLayerKindReportsLineOffset) {
  auto bytes = serialize_model(fixture::small_cnn(8));
  const std::string text(bytes.begin() + 12, bytes.begin() + static_cast<long>(manifest_end(bytes)));
  const std::size_t at = text.find("relu");
  ASSERT_NE(at, std::string::npos);
  std::memcpy(bytes.data() + 12 + at, "gelu", 4);
  EXPECT_EQ(offset_of(bytes), 12 + at);
}

TEST(Clpw, InconsistentStructureIsFormatError) {
  auto bytes = serialize_model(fixture::small_cnn(9));
  const std::string text(bytes.begin() + 12, bytes.begin() + static_cast<long>(manifest_end(bytes)));
  const std::size_t at = text.find("classes 3");
  ASSERT_NE(at, std::string::npos);
  bytes[12 + at + 8] = '4';
  EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(Clpw, MissingFileIsIoError) {
  EXPECT_THROW(load_model("/nonexistent/dir/model.clpw"), IoError);
}
