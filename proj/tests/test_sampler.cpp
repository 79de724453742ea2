// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <vector>

#include "gtest/gtest.h"
#include "maskgram/distortion.hpp"
#include "maskgram/sampler.hpp"

namespace maskgram {
namespace {

// Logits that depend on the current codegram and the condition flag, drawn
// from a hash so every call is cheap and reproducible.
LogitFn RandomLogits(std::uint64_t seed, double cond_shift = 0.5) {
  return [seed, cond_shift](const Codegram& cg, bool null) {
    std::uint64_t h = seed;
    for (int v : cg.tokens) h = mix_seed(h ^ static_cast<std::uint64_t>(v + 1));
    Rng rng(h);
    Tensor<double> out({static_cast<std::size_t>(cg.Q), static_cast<std::size_t>(cg.T), static_cast<std::size_t>(cg.K)});
    for (auto& v : out.data) v = 2.0 * rng.normal() + (null ? 0.0 : cond_shift);
    return out;
  };
}

TEST(GuidedLogits, Examples) {
  Tensor<double> lc({1, 1, 3}, std::vector<double>{2, -1, 0.5});
  Tensor<double> lu({1, 1, 3}, std::vector<double>{1, 4, 0.25});
  EXPECT_EQ(guided_logits(lc, lu, 0.0), lc);
  EXPECT_EQ(guided_logits(lc, lu, 1.0).data[0], 3.0);
  for (double w : {0.0, 0.5, 1.0, 3.0}) EXPECT_EQ(guided_logits(lc, lc, w), lc);
}

TEST(GuidedLogits, EqualInputsExactForArbitraryValues) {
  Rng rng(5);
  Tensor<double> l({2, 7, 9});
  for (auto& v : l.data) v = 10.0 * rng.normal();
  for (double w : {0.3, 2.5, 10.0}) EXPECT_EQ(guided_logits(l, l, w), l);
}

TEST(NoiseVariance, Examples) {
  EXPECT_EQ(noise_variance(0, 20), 4.0);
  EXPECT_EQ(noise_variance(19, 20), 0.0);
  EXPECT_DOUBLE_EQ(noise_variance(9, 19), 2.0);
  EXPECT_EQ(noise_variance(0, 1), 0.0);
}

TEST(DecodeIterative, ScheduleTrajectoryIsExact) {
  DecodeConfig cfg;
  for (std::size_t m0 : {1u, 7u, 1000u}) {
    // Q = 1 and T = M0 so the whole grid starts masked.
    DecodeTelemetry tel;
    auto cg = decode_iterative(RandomLogits(1), 1, static_cast<int>(m0), 16, cfg, &tel);
    ASSERT_EQ(tel.masked_after.size(), 20u);
    for (int i = 0; i < 20; ++i) {
      const auto expect = static_cast<std::size_t>(std::floor(std::cos(std::numbers::pi * (i + 1) / 40.0) * m0));
      EXPECT_EQ(tel.masked_after[static_cast<std::size_t>(i)], expect) << "M0=" << m0 << " i=" << i;
    }
    EXPECT_EQ(cg.masked_count(), 0u);
  }
}

TEST(DecodeIterative, CommittedTokensNeverChange) {
  DecodeConfig cfg;
  cfg.iterations = 8;
  auto st = decode_start(2, 30, 10, 5);
  auto fn = RandomLogits(2);
  Codegram prev = st.codegram;
  for (int i = 0; i < 8; ++i) {
    decode_step(st, fn, cfg);
    for (std::size_t p = 0; p < prev.tokens.size(); ++p)
      if (prev.tokens[p] != 10) EXPECT_EQ(st.codegram.tokens[p], prev.tokens[p]);
    EXPECT_LE(st.codegram.masked_count(), prev.masked_count());
    prev = st.codegram;
  }
  EXPECT_EQ(st.codegram.masked_count(), 0u);
}

TEST(DecodeIterative, DeterministicAndDegenerateVocab) {
  DecodeConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(decode_iterative(RandomLogits(3), 3, 12, 8, cfg), decode_iterative(RandomLogits(3), 3, 12, 8, cfg));
  auto one = decode_iterative(RandomLogits(4), 2, 9, 1, cfg);
  for (int v : one.tokens) EXPECT_EQ(v, 0);
}

TEST(DecodeIterative, ZeroGuidanceEqualsConditionalOnly) {
  DecodeConfig a;
  a.guidance = 0.0;
  a.seed = 11;
  DecodeConfig b = a;
  b.conditional_only = true;
  int uncond_calls = 0;
  auto base = RandomLogits(5);
  LogitFn counting = [&](const Codegram& cg, bool null) {
    uncond_calls += null;
    return base(cg, null);
  };
  auto x = decode_iterative(counting, 2, 25, 12, a);
  const int guided_calls = uncond_calls;
  uncond_calls = 0;
  auto y = decode_iterative(counting, 2, 25, 12, b);
  EXPECT_EQ(x, y);
  EXPECT_GT(guided_calls, 0);
  EXPECT_EQ(uncond_calls, 0);
}

TEST(DecodeStep, ZeroNoiseCommitsHighestScores) {
  // One step of N = 1: noise variance is 0 and every position is committed,
  // so use N = 2 and inspect which positions stay masked after step 0.
  DecodeConfig cfg;
  cfg.iterations = 2;
  cfg.noise_v0 = 0.0;
  const int t = 40;
  // Logit for token 0 increases with t, others very negative: sampled token is
  // 0 everywhere and its score orders positions by t.
  LogitFn fn = [](const Codegram& cg, bool) {
    Tensor<double> out({1, static_cast<std::size_t>(cg.T), 3}, -50.0);
    for (int i = 0; i < cg.T; ++i) out.data[static_cast<std::size_t>(i) * 3] = i;
    return out;
  };
  auto st = decode_start(1, t, 3, 0);
  decode_step(st, fn, cfg);
  const auto keep = scheduled_masked(0, 2, t);
  for (int i = 0; i < t; ++i) EXPECT_EQ(st.codegram.at(0, i) == 3, static_cast<std::size_t>(i) < keep);
}

TEST(DecodeStep, SpanScoresUseMaximum) {
  // Two spans of length 5 in one row; span 0 holds token scores {1,9,3,2,0}
  // (max 9) and span 1 holds uniform 5s (max 5). With one span kept masked,
  // span 1 is the one that stays.
  DecodeConfig cfg;
  cfg.iterations = 3;  // floor(cos(pi/6) * 2) = 1 unit remains after step 0
  cfg.noise_v0 = 0.0;
  cfg.span_length = 5;
  const std::vector<double> s0 = {1, 9, 3, 2, 0};
  LogitFn fn = [&](const Codegram& cg, bool) {
    Tensor<double> out({1, 10, 2}, -60.0);
    for (int i = 0; i < 10; ++i) out.data[static_cast<std::size_t>(i) * 2] = i < 5 ? s0[static_cast<std::size_t>(i)] : 5.0;
    (void)cg;
    return out;
  };
  auto st = decode_start(1, 10, 2, 0, 5);
  decode_step(st, fn, cfg);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(st.codegram.at(0, i) == 2, i >= 5) << i;
}

TEST(GriffinLim, RecoversConsistentSpectrogram) {
  auto x = synth_clean(3, 0.5, 16000);
  auto spec = stft(x.samples, 512, 128);
  Tensor<double> mag = Tensor<double>::matrix(spec.size(), 257);
  for (std::size_t t = 0; t < spec.size(); ++t)
    for (std::size_t f = 0; f < 257; ++f) mag.at(t, f) = std::abs(spec[t][f]);
  // True phase everywhere: reconstruction is exact.
  auto y = griffin_lim(mag, spec, 256, 512, 128, x.size(), 4, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x.samples[i], 1e-6);
  // Random phase: the spectral error falls with iterations.
  auto err = [&](int iters) {
    auto z = griffin_lim(mag, spec, 0, 512, 128, x.size(), iters, 2);
    auto s = stft(z, 512, 128);
    double e = 0, n = 0;
    for (std::size_t t = 0; t < s.size(); ++t)
      for (std::size_t f = 0; f < 257; ++f) {
        e += std::pow(std::abs(s[t][f]) - mag.at(t, f), 2);
        n += mag.at(t, f) * mag.at(t, f);
      }
    return e / n;
  };
  EXPECT_LT(err(32), err(1));
}

TEST(CutoffEstimate, FindsBandEdge) {
  auto x = make_noise(4, 16000, 16000, NoiseColor::kWhite);
  auto y = bandlimit(x, 3000);
  const auto bin = estimate_cutoff_bin(stft(y.samples, 512, 256));
  const double hz = bin * 16000.0 / 512.0;
  EXPECT_GT(hz, 3000.0);
  EXPECT_LT(hz, 4000.0);
}

}  // namespace
}  // namespace maskgram
