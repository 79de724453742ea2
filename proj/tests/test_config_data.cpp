// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <filesystem>

#include "gtest/gtest.h"
#include "maskgram/data.hpp"
#include "maskgram/gradcheck.hpp"

namespace maskgram {
namespace {

TEST(RunConfig, EmptyInputGivesToyDefaults) {
  RunConfig c = RunConfig::toy();
  apply_config_text(c, "");
  EXPECT_EQ(config_text(c), config_text(RunConfig::toy()));
  EXPECT_EQ(c.d, 64);
  EXPECT_EQ(c.steps, 2000);
  EXPECT_EQ(c.K_t, 50);
}

TEST(RunConfig, FileThenFlagPrecedence) {
  RunConfig c = RunConfig::toy();
  apply_config_text(c, "[model]\nd = 32\n[train]\nsteps = 10\nlr = 0.5\n");
  set_config_value(c, "train.steps", "20");
  EXPECT_EQ(c.d, 32);
  EXPECT_EQ(c.steps, 20);
  EXPECT_EQ(c.lr, 0.5);
}

TEST(RunConfig, UnknownConflictingAndMalformed) {
  RunConfig c;
  try {
    apply_config_text(c, "[model]\nwidth = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.width"), std::string::npos);
  }
  EXPECT_THROW(apply_config_text(c, "[model]\nd = 3\nd = 4\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "[model]\nd = three\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "[model\n"), ConfigError);
  EXPECT_THROW(set_config_value(c, "seed", "1"), ConfigError);  // ambiguous
  EXPECT_NO_THROW(set_config_value(c, "K_t", "7"));
  EXPECT_EQ(c.K_t, 7);
}

TEST(RunConfig, TextRoundTripsBothPresets) {
  for (const auto& base : {RunConfig::toy(), RunConfig::paper()}) {
    RunConfig c = base;
    c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
    RunConfig back;
    apply_config_text(back, config_text(c));
    EXPECT_EQ(config_text(back), config_text(c));
    EXPECT_EQ(back.lr, c.lr);
  }
  EXPECT_EQ(RunConfig::paper().d, 512);
  EXPECT_THROW(RunConfig::from_preset("huge"), ConfigError);
}

TEST(RunConfig, ValidateRejectsBadValues) {
  RunConfig c;
  c.n_heads = 5;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.heldout = c.clips;
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_NO_THROW(validate(RunConfig::paper()));
}

TEST(Manifest, RoundTripAndSplits) {
  RunConfig c;
  c.clips = 12;
  c.heldout = 3;
  const auto m = make_manifest(c);
  EXPECT_EQ(m.split("train").size(), 9u);
  EXPECT_EQ(m.split("test").size(), 3u);
  const auto text = manifest_to_jsonl(m);
  const auto back = parse_manifest(text);
  EXPECT_EQ(manifest_to_jsonl(back), text);
  EXPECT_EQ(back.config, config_text(c));
  for (const auto& r : m.records) {
    EXPECT_GE(r.spec.snr_db, -5.0);
    EXPECT_LE(r.spec.snr_db, 20.0);
    EXPECT_GE(r.spec.bandwidth_hz, 1000.0);
    EXPECT_LE(r.spec.bandwidth_hz, 8000.0);
  }
}

TEST(Manifest, RejectsWrongHeaderAndVersion) {
  EXPECT_THROW(parse_manifest(""), IoError);
  EXPECT_THROW(parse_manifest("{\"format\":\"other\",\"version\":1}\n"), IoError);
  EXPECT_THROW(parse_manifest("{\"format\":\"maskgram-manifest\",\"version\":9,\"sample_rate\":16000}\n"), IoError);
  EXPECT_THROW(parse_manifest("{\"format\":\"maskgram-manifest\",\"version\":1,\"sample_rate\":16000}\n{bad\n"),
               IoError);
}

TEST(Manifest, RealizeIsDeterministic) {
  RunConfig c;
  c.clips = 2;
  c.heldout = 1;
  const auto m = make_manifest(c);
  const auto a = realize(m.records[0], c.sample_rate);
  const auto b = realize(m.records[0], c.sample_rate);
  EXPECT_EQ(a.distorted.samples, b.distorted.samples);
  EXPECT_EQ(a.clean.size(), 16000u);
  for (double v : a.distorted.samples) EXPECT_LE(std::abs(v), 0.99);
}

TEST(Artifacts, StampAndVerify) {
  Checkpoint ck;
  stamp_artifact(ck, "codec", RunConfig{});
  EXPECT_NO_THROW(expect_artifact(ck, "codec", "x"));
  EXPECT_THROW(expect_artifact(ck, "model", "x"), IoError);
  EXPECT_EQ(ck.text("meta/config"), config_text(RunConfig{}));
}

TEST(Dataset, ExamplesAlignFramesAndTargets) {
  RunConfig c;
  c.clips = 4;
  c.heldout = 1;
  c.Q = 2;
  c.K = 8;
  const auto m = make_manifest(c);
  std::vector<RealizedPair> pairs;
  std::vector<Waveform> cleans;
  for (const auto* r : m.split("train")) {
    pairs.push_back(realize(*r, c.sample_rate));
    cleans.push_back(pairs.back().clean);
  }
  const auto codec = rvq_train(stack_frames(cleans, audio_config(c)), c.Q, c.K, 1);
  const auto teacher = make_teacher(c);
  for (KdVariant kd : {KdVariant::kNone, KdVariant::kAvgFeature, KdVariant::kStftLow}) {
    const auto ex = build_examples(pairs, codec, kd, teacher, nullptr, c);
    ASSERT_EQ(ex.size(), 3u);
    EXPECT_EQ(ex[0].features.rows(), 63u);
    EXPECT_EQ(ex[0].features.cols(), 257u);
    EXPECT_EQ(ex[0].target.T, 63);
    EXPECT_EQ(ex[0].kd_target.has_value(), kd != KdVariant::kNone);
    if (kd != KdVariant::kNone)
      EXPECT_EQ(static_cast<int>(ex[0].kd_target->feats.cols()), kd_width(kd, c));
  }
  EXPECT_THROW(build_examples(pairs, codec, KdVariant::kL9K500, teacher, nullptr, c), ContractError);
}

TEST(Gradcheck, EveryParameterMatchesFiniteDifferences) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = gradcheck_suite();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& e : r.entries) EXPECT_LT(e.max_rel_error, 1e-3) << e.name;
  EXPECT_TRUE(r.passed());
  EXPECT_GT(r.checked, 5000u);
  EXPECT_LT(secs, 60.0);
}

}  // namespace
}  // namespace maskgram
