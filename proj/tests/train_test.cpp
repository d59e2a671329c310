// SPDX-License-Identifier: Apache-2.0
#include "gruchat/train.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <string>

namespace gruchat {
namespace {

std::string periodic_corpus(std::size_t n) {
  std::string s;
  while (s.size() < n) s += "ab";
  return s;
}

ModelConfig toy_config(const Vocabulary& v, double lr) {
  ModelConfig c;
  c.vocab_size = v.size();
  c.layers = 1;
  c.blocks_per_layer = 1;
  c.units_per_block = 16;
  c.bptt_window = 16;
  c.learning_rate = lr;
  c.seed = 7;
  return c;
}

TEST(TrainTest, LearnsPeriodTwoCorpus) {
  const std::string text = periodic_corpus(1024);
  Vocabulary v = build_vocabulary(text);
  TrainOptions opt;
  opt.batch_size = 4;
  opt.epochs = 100;
  opt.max_steps = 500;
  auto result = train<float>(text, v, toy_config(v, 1e-2), opt);
  ASSERT_FALSE(result.loss_history.empty());
  EXPECT_LE(result.loss_history.size(), 500u);
  EXPECT_LT(*std::min_element(result.loss_history.begin(), result.loss_history.end()), 0.05);
  EXPECT_LT(result.loss_history.back(), 0.05);
}

TEST(TrainTest, ZeroLearningRateLeavesParamsUnchanged) {
  const std::string text = periodic_corpus(512);
  Vocabulary v = build_vocabulary(text);
  TrainOptions opt;
  opt.batch_size = 2;
  opt.epochs = 3;
  const ModelConfig c = toy_config(v, 0.0);
  auto result = train<float>(text, v, c, opt);
  EXPECT_GT(result.loss_history.size(), 10u);
  EXPECT_TRUE(result.params == init_params<float>(c));
}

TEST(TrainTest, DeterministicGivenSeed) {
  const std::string text = "the cat sat on the mat\nthe dog sat on the log\n" + periodic_corpus(300);
  Vocabulary v = build_vocabulary(text);
  TrainOptions opt;
  opt.batch_size = 3;
  opt.epochs = 2;
  auto a = train<float>(text, v, toy_config(v, 3e-3), opt);
  auto b = train<float>(text, v, toy_config(v, 3e-3), opt);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_TRUE(a.params == b.params);
}

TEST(TrainTest, StepCallbackSeesEveryUpdate) {
  const std::string text = periodic_corpus(256);
  Vocabulary v = build_vocabulary(text);
  TrainOptions opt;
  opt.batch_size = 1;
  opt.max_steps = 5;
  opt.epochs = 10;
  int calls = 0;
  opt.on_step = [&](int step, double loss) {
    EXPECT_EQ(step, ++calls);
    EXPECT_GT(loss, 0.0);
  };
  auto result = train<float>(text, v, toy_config(v, 1e-3), opt);
  EXPECT_EQ(calls, 5);
  EXPECT_EQ(result.loss_history.size(), 5u);
}

TEST(TrainTest, DivergenceIsReported) {
  const std::string text = periodic_corpus(256);
  Vocabulary v = build_vocabulary(text);
  TrainOptions opt;
  opt.batch_size = 1;
  ModelConfig c = toy_config(v, 1e-3);
  c.learning_rate = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train<float>(text, v, c, opt), InvalidArgument);
  // A NaN gradient step poisons the params; the next loss is NaN.
  opt.clip_norm = 0.0;
  opt.beta1 = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train<float>(text, v, toy_config(v, 1e-3), opt), TrainingDiverged);
}

TEST(ClipTest, GlobalNorm) {
  ModelConfig c;
  c.vocab_size = 3;
  c.layers = 1;
  c.units_per_block = 2;
  auto g = init_params<double>(c).zeros_like();
  g.w_out(0, 0) = 30.0;
  g.b_out(1, 0) = 40.0;
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 50.0);
  EXPECT_DOUBLE_EQ(g.w_out(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.b_out(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 5.0);
  EXPECT_DOUBLE_EQ(g.w_out(0, 0), 3.0);
}

}  // namespace
}  // namespace gruchat
