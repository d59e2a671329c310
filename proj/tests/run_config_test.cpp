// SPDX-License-Identifier: Apache-2.0
#include "gruchat/run_config.hpp"

#include <gtest/gtest.h>

namespace gruchat {
namespace {

TEST(RunConfigTest, Defaults) {
  RunConfig c;
  EXPECT_EQ(c.objective.kind, Objective::kMmi);
  EXPECT_EQ(c.objective.lambda, 0.5);
  EXPECT_EQ(c.beam_width, 2);
  EXPECT_EQ(c.max_len, 500);
  EXPECT_EQ(c.pairs, 15);
  EXPECT_EQ(c.neighbors, 5);
}

TEST(RunConfigTest, ParsesFile) {
  RunConfig c;
  apply_config_text(c, "# experiment\n  loss = ent \nlambda=0.25\r\n\nseed-text=how are you, friend?\nrng-seed=18446744073709551615\nunits=32\n");
  EXPECT_EQ(c.objective.kind, Objective::kEnt);
  EXPECT_EQ(c.objective.lambda, 0.25);
  EXPECT_EQ(c.seed_text, "how are you, friend?");
  EXPECT_EQ(c.rng_seed, 18446744073709551615ull);
  EXPECT_EQ(c.model_config(10).units_per_block, 32);
  EXPECT_EQ(c.model_config(10).seed, c.rng_seed);
}

TEST(RunConfigTest, LaterValuesOverrideEarlier) {
  RunConfig c;
  apply_config_text(c, "pairs=3\nloss=net\n");
  apply_kv(c, "pairs", "7");
  EXPECT_EQ(c.pairs, 7);
  EXPECT_EQ(c.objective.kind, Objective::kNet);
}

TEST(RunConfigTest, Errors) {
  RunConfig c;
  EXPECT_THROW(apply_kv(c, "colour", "blue"), InvalidArgument);
  EXPECT_THROW(apply_kv(c, "pairs", "many"), InvalidArgument);
  EXPECT_THROW(apply_kv(c, "pairs", "3x"), InvalidArgument);
  EXPECT_THROW(apply_kv(c, "lambda", "nan"), InvalidArgument);
  EXPECT_THROW(apply_config_text(c, "pairs\n"), InvalidArgument);
  try {
    apply_kv(c, "loss", "bleu");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("net, mmi, norm, ent"), std::string::npos);
  }
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), IoError);
}

TEST(RunConfigTest, SerializesEveryKeyAndRoundTrips) {
  RunConfig c;
  apply_config_text(c, "loss=norm\nlambda=0.125\nout=runs/a\nwindow=16\nneighbors=3\n");
  const auto j = to_json(c);
  EXPECT_EQ(j["config_format_version"], kRunConfigFormatVersion);
  for (const auto& k : config_keys()) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["loss"], "norm");

  RunConfig back;
  apply_config_text(back, to_config_text(c));
  EXPECT_EQ(to_json(back), j);
}

}  // namespace
}  // namespace gruchat
