// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "maskgram/adam.hpp"
#include "maskgram/autograd.hpp"
#include "maskgram/checkpoint.hpp"
#include "maskgram/nn.hpp"

namespace maskgram {
namespace {

Tensor<double> RandomMatrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t = Tensor<double>::matrix(r, c);
  for (auto& x : t.data) x = rng.normal(0.0, scale);
  return t;
}

TEST(SinusoidalPe, FirstRowAlternatesZeroOne) {
  auto pe = sinusoidal_pe(1, 4);
  EXPECT_EQ(pe.data, (std::vector<double>{0, 1, 0, 1}));
}

TEST(SinusoidalPe, SecondRowOfWidthTwo) {
  auto pe = sinusoidal_pe(2, 2);
  EXPECT_NEAR(pe.at(1, 0), 0.8414709848, 1e-9);
  EXPECT_NEAR(pe.at(1, 1), 0.5403023059, 1e-9);
}

TEST(SinusoidalPe, BoundedAndRejectsOddWidth) {
  auto pe = sinusoidal_pe(37, 16);
  for (double v : pe.data) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
  EXPECT_THROW(sinusoidal_pe(3, 5), ConfigError);
}

ParamSet<double> StackParams(int blocks, std::size_t d, std::uint64_t seed) {
  ParamSet<double> p;
  Rng rng(seed);
  add_transformer_params(p, "enc", blocks, d, 4, rng);
  // Larger weights than the 0.02 init so the blocks do something measurable.
  for (auto& [name, t] : p.tensors())
    if (name.ends_with("/w"))
      for (auto& x : t.data) x *= 15.0;
  return p;
}

TEST(ForwardTransformer, ZeroBlocksIsIdentity) {
  auto p = StackParams(2, 8, 1);
  Graph<double> g(false);
  auto x = RandomMatrix(5, 8, 2);
  Var in = g.constant(x);
  Var out = forward_transformer(g, p, "enc", in, 0, 0, 2);
  EXPECT_EQ(g.value(out), x);
}

TEST(ForwardTransformer, PreservesShapeAndIsPermutationEquivariant) {
  auto p = StackParams(2, 8, 3);
  auto x = RandomMatrix(5, 8, 4);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor<double> xp = x;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) xp.at(r, c) = x.at(perm[r], c);
  Graph<double> g(false);
  auto y = g.value(forward_transformer(g, p, "enc", g.constant(x), 0, 2, 2));
  auto yp = g.value(forward_transformer(g, p, "enc", g.constant(xp), 0, 2, 2));
  ASSERT_EQ(y.shape, x.shape);
  double diff = 0.0, moved = 0.0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      diff = std::max(diff, std::abs(yp.at(r, c) - y.at(perm[r], c)));
      moved = std::max(moved, std::abs(y.at(r, c) - x.at(r, c)));
    }
  EXPECT_LT(diff, 1e-12);
  EXPECT_GT(moved, 1e-3);
}

TEST(ForwardTransformer, NonFiniteActivationNamesTheBlock) {
  auto p = StackParams(2, 8, 5);
  p.at("enc/block1/mlp/down/b").data[0] = std::numeric_limits<double>::infinity();
  Graph<double> g(false);
  try {
    forward_transformer(g, p, "enc", g.constant(RandomMatrix(3, 8, 6)), 0, 2, 2);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
  }
}

TEST(Autograd, SumGivesAllOnes) {
  Graph<double> g;
  Var p = g.parameter("p", RandomMatrix(3, 4, 7));
  g.backward(g.sum(p));
  for (double v : g.grad(p).data) EXPECT_EQ(v, 1.0);
}

TEST(Autograd, MseAgainstOwnValueHasZeroGradient) {
  Graph<double> g;
  auto x = RandomMatrix(3, 4, 8);
  Var p = g.parameter("p", x);
  g.backward(g.mse(p, x));
  for (double v : g.grad(p).data) EXPECT_EQ(v, 0.0);
}

TEST(Autograd, UnreachableParameterGetsZero) {
  Graph<double> g;
  Var a = g.parameter("a", RandomMatrix(2, 2, 9));
  Var b = g.parameter("b", RandomMatrix(2, 2, 10));
  g.backward(g.sum(a));
  auto grads = g.parameter_grads();
  for (double v : grads.at("b").data) EXPECT_EQ(v, 0.0);
  (void)b;
}

// Central-difference check of every primitive op through a composite scalar.
TEST(Autograd, PrimitiveOpsMatchFiniteDifferences) {
  const auto a0 = RandomMatrix(4, 6, 11);
  const auto b0 = RandomMatrix(6, 6, 12);
  const auto r0 = RandomMatrix(1, 6, 13);
  const auto table0 = RandomMatrix(5, 6, 14);
  const std::vector<int> ids = {4, 0, 4, 2};
  const std::vector<int> targets = {1, 2, 0, 1, 2, 2, 0, 0};
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1, 1, 0};
  const auto target = RandomMatrix(2, 6, 15);

  auto build = [&](Graph<double>& g, const TensorMap<double>& v) {
    Var a = g.parameter("a", v.at("a"));
    Var b = g.parameter("b", v.at("b"));
    Var r = g.parameter("r", v.at("r"));
    Var tb = g.parameter("table", v.at("table"));
    Var h = g.add(g.matmul(a, b), g.gather_rows(tb, ids));
    h = g.layer_norm(h, r, g.scale(r, 0.5));
    h = g.gelu(g.mul_row(g.add_row(h, r), r));
    Var s = g.softmax_rows(g.matmul(h, g.transpose(h)));
    Var parts[] = {g.slice_cols(h, 0, 3), g.slice_cols(g.matmul(s, h), 3, 6)};
    Var cat = g.concat_cols(parts);
    Var ce = g.masked_cross_entropy(cat, 2, targets, mask);
    Var pooled = g.pool_rows(cat, 2);
    Var m = g.mse(pooled, target);
    Var bc = g.sum(g.broadcast_row(r, 3));
    Var terms[] = {ce, m, g.scale(bc, 0.1)};
    return g.mean(terms);
  };
  TensorMap<double> vals{{"a", a0}, {"b", b0}, {"r", r0}, {"table", table0}};
  Graph<double> g;
  g.backward(build(g, vals));
  auto grads = g.parameter_grads();
  const double h = 1e-5;
  for (auto& [name, t] : vals) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + h;
      Graph<double> gp(false);
      const double fp = gp.value(build(gp, vals)).data[0];
      t.data[i] = orig - h;
      Graph<double> gm(false);
      const double fm = gm.value(build(gm, vals)).data[0];
      t.data[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      EXPECT_NEAR(grads.at(name).data[i], numeric, 1e-7 + 1e-5 * std::abs(numeric)) << name << "[" << i << "]";
    }
  }
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  Graph<float> g(false);
  Tensor<float> x = Tensor<float>::matrix(7, 33);
  Rng rng(16);
  for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 10.0));
  auto y = g.value(g.softmax_rows(g.constant(x)));
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (float v : y.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Adam, ZeroGradientFreshStateIsFixedPoint) {
  ParamSet<float> p;
  p.add("w", Tensor<float>({3}, std::vector<float>{1.f, -2.f, 3.f}));
  const auto before = p;
  AdamState<float> st;
  TensorMap<float> grads{{"w", Tensor<float>({3})}};
  adam_step(p, grads, st, AdamOptions{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet<double> p;
  p.add("w", Tensor<double>({1}, std::vector<double>{0.5}));
  AdamState<double> st;
  const double g = 0.37, lr = 1e-3, eps = 1e-8;
  adam_step(p, TensorMap<double>{{"w", Tensor<double>({1}, std::vector<double>{g})}}, st,
            AdamOptions{lr, 0.9, 0.999, eps});
  EXPECT_NEAR(0.5 - p.at("w").data[0], lr * g / (g + eps), 1e-15);
}

TEST(Adam, ZeroLearningRateIsFixedPoint) {
  ParamSet<float> p;
  p.add("w", Tensor<float>({2}, std::vector<float>{0.25f, 4.f}));
  const auto before = p;
  AdamState<float> st;
  for (int i = 0; i < 3; ++i)
    adam_step(p, TensorMap<float>{{"w", Tensor<float>({2}, std::vector<float>{1.f, -7.f})}}, st,
              AdamOptions{0.0, 0.9, 0.999, 1e-8});
  EXPECT_EQ(p, before);
}

TEST(Adam, NonFiniteGradientAbortsAndNamesParameter) {
  ParamSet<float> p;
  p.add("a", Tensor<float>({1}, 1.f));
  p.add("b", Tensor<float>({1}, 2.f));
  const auto before = p;
  AdamState<float> st;
  TensorMap<float> grads{{"a", Tensor<float>({1}, 1.f)},
                         {"b", Tensor<float>({1}, std::numeric_limits<float>::quiet_NaN())}};
  try {
    adam_step(p, grads, st, AdamOptions{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 0);
}

TEST(MaskedCrossEntropy, UniformLogitsGiveLogK) {
  Tensor<double> logits({1, 3, 64});
  std::vector<int> targets = {5, 17, 63};
  std::vector<std::uint8_t> mask = {1, 1, 1};
  EXPECT_NEAR(masked_cross_entropy(logits, targets, mask).value, std::log(64.0), 1e-12);
}

TEST(MaskedCrossEntropy, ConfidentTargetIsNearZero) {
  Tensor<double> logits({1, 1, 4});
  logits.data[2] = 30.0;
  std::vector<int> targets = {2};
  std::vector<std::uint8_t> mask = {1};
  EXPECT_LT(masked_cross_entropy(logits, targets, mask).value, 1e-9);
}

TEST(MaskedCrossEntropy, AveragesOnlyMaskedPositions) {
  // 1 x 5 x 4 logits; positions 1 and 3 masked.
  Tensor<double> logits({1, 5, 4});
  Rng rng(17);
  for (auto& v : logits.data) v = rng.normal();
  std::vector<int> targets = {0, 3, 1, 2, 0};
  std::vector<std::uint8_t> mask = {0, 1, 0, 1, 0};
  auto nll = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += std::exp(logits.data[t * 4 + j]);
    return std::log(s) - logits.data[t * 4 + static_cast<std::size_t>(targets[t])];
  };
  EXPECT_NEAR(masked_cross_entropy(logits, targets, mask).value, (nll(1) + nll(3)) / 2, 1e-12);
}

TEST(MaskedCrossEntropy, EmptyMaskIsZeroWithFlag) {
  Tensor<double> logits({2, 3, 4});
  std::vector<int> targets(6, 0);
  std::vector<std::uint8_t> mask(6, 0);
  auto r = masked_cross_entropy(logits, targets, mask);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.empty_mask);
}

TEST(MseLoss, Examples) {
  Tensor<double> t({2, 3}, 0.5);
  EXPECT_EQ(mse_loss(t, t), 0.0);
  Tensor<double> p = t;
  for (auto& v : p.data) v += 1.0;
  EXPECT_DOUBLE_EQ(mse_loss(p, t), 1.0);
  EXPECT_DOUBLE_EQ(mse_loss(Tensor<double>({2}, std::vector<double>{1, 2}), Tensor<double>({2})), 2.5);
  EXPECT_THROW(mse_loss(Tensor<double>({2}), Tensor<double>({3})), ContractError);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  Checkpoint ck;
  ck.put_tensor("w", RandomMatrix(3, 5, 18).cast<float>());
  ck.put_tensor("d", RandomMatrix(2, 2, 19));
  std::vector<std::int32_t> toks = {1, -2, 3};
  ck.put<std::int32_t>("toks", toks, {3});
  ck.put_text("meta/config", "[model]\nd=8\n");
  const auto bytes = ck.serialize();
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MSKG");
  const auto back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.tensor<float>("w"), ck.tensor<float>("w"));
  EXPECT_EQ(back.text("meta/config"), "[model]\nd=8\n");
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(Checkpoint::deserialize(truncated), IoError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bad), IoError);
}

}  // namespace
}  // namespace maskgram
