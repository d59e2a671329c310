// SPDX-License-Identifier: Apache-2.0
#include "gruchat/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace gruchat {
namespace {

Model random_model(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::string text = "Hello, world!\nGoodbye \xC3\xA9t\xC3\xA9.\n";
  for (int i = 0; i < 50; ++i) text.push_back(static_cast<char>('a' + gen() % 26));
  Model m;
  m.vocab = build_vocabulary(text);
  ModelConfig c;
  c.vocab_size = m.vocab.size();
  c.layers = 1 + static_cast<int>(gen() % 3);
  c.blocks_per_layer = 1 + static_cast<int>(gen() % 2);
  c.units_per_block = 1 + static_cast<int>(gen() % 9);
  c.bptt_window = 1 + static_cast<int>(gen() % 64);
  c.learning_rate = 1e-3 * static_cast<double>(1 + gen() % 10);
  c.seed = gen();
  m.params = init_params<float>(c);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  m.params.for_each_tensor([&](Mat<float>& t) { t = t.unaryExpr([&](float) { return nd(gen); }); });
  return m;
}

CheckpointError::Kind kind_of(const std::string& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a CheckpointError";
  return CheckpointError::Kind::kCorrupt;
}

TEST(CheckpointTest, RoundTripIsIdentity) {
  const auto dir = std::filesystem::temp_directory_path() / "gruchat_ckpt_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Model m = random_model(seed);
    const std::string path = (dir / ("m" + std::to_string(seed) + ".gruc")).string();
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    EXPECT_TRUE(back.params == m.params);
    EXPECT_EQ(back.config(), m.config());
    EXPECT_TRUE(back.vocab == m.vocab);
    EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(m));
  }
  std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, HeaderLayout) {
  const std::string bytes = serialize_checkpoint(random_model(1));
  EXPECT_EQ(bytes.substr(0, 4), "GRUC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
}

TEST(CheckpointTest, BadMagic) {
  std::string bytes = serialize_checkpoint(random_model(2));
  bytes[1] = 'X';
  EXPECT_EQ(kind_of(bytes), CheckpointError::Kind::kBadMagic);
  EXPECT_EQ(kind_of("GR"), CheckpointError::Kind::kTruncated);
}

TEST(CheckpointTest, VersionMismatch) {
  std::string bytes = serialize_checkpoint(random_model(3));
  bytes[4] = 2;
  EXPECT_EQ(kind_of(bytes), CheckpointError::Kind::kVersionMismatch);
}

TEST(CheckpointTest, TruncatedAnywhere) {
  const std::string bytes = serialize_checkpoint(random_model(4));
  for (std::size_t len : {std::size_t{6}, std::size_t{20}, std::size_t{45}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(kind_of(bytes.substr(0, len)), CheckpointError::Kind::kTruncated) << "length " << len;
  }
}

TEST(CheckpointTest, TrailingBytesAndBadShapesAreCorrupt) {
  std::string bytes = serialize_checkpoint(random_model(5));
  EXPECT_EQ(kind_of(bytes + "x"), CheckpointError::Kind::kCorrupt);
  std::string zero_layers = bytes;
  zero_layers[12] = zero_layers[13] = zero_layers[14] = zero_layers[15] = 0;
  EXPECT_EQ(kind_of(zero_layers), CheckpointError::Kind::kCorrupt);
}

TEST(CheckpointTest, MissingFileIsAnIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.gruc"), IoError);
}

}  // namespace
}  // namespace gruchat
