// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <vector>

#include "gtest/gtest.h"
#include "maskgram/codec.hpp"
#include "maskgram/random.hpp"

namespace maskgram {
namespace {

// Frames drawn around a few cluster centres with a decaying spectrum, so RVQ
// stages have structure to find.
Tensor<double> Corpus(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> centres(6, std::vector<double>(c));
  for (auto& ctr : centres)
    for (std::size_t j = 0; j < c; ++j) ctr[j] = rng.normal() / (1.0 + 0.2 * static_cast<double>(j));
  Tensor<double> x = Tensor<double>::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ctr = centres[rng.below(centres.size())];
    for (std::size_t j = 0; j < c; ++j) x.at(i, j) = ctr[j] + 0.3 * rng.normal() / (1.0 + 0.1 * static_cast<double>(j));
  }
  return x;
}

double Mse(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

TEST(RvqTrain, ExactFitOfRepeatedFrames) {
  Rng rng(1);
  Tensor<double> base = Tensor<double>::matrix(4, 12);
  for (auto& v : base.data) v = rng.normal();
  Tensor<double> corpus = Tensor<double>::matrix(40, 12);
  for (std::size_t i = 0; i < 40; ++i)
    std::copy(base.row(i % 4).begin(), base.row(i % 4).end(), corpus.row(i).begin());
  auto codec = rvq_train(corpus, 1, 4, 7);
  auto rec = rvq_decode(rvq_encode(corpus, codec), codec);
  EXPECT_LT(Mse(rec, corpus), 1e-8);
}

TEST(RvqTrain, StageMseNonIncreasingAndDeterministic) {
  auto corpus = Corpus(600, 24, 2);
  auto codec = rvq_train(corpus, 4, 16, 3);
  ASSERT_EQ(codec.train_mse.size(), 5u);
  for (std::size_t q = 1; q < codec.train_mse.size(); ++q) EXPECT_LE(codec.train_mse[q], codec.train_mse[q - 1]);
  auto again = rvq_train(corpus, 4, 16, 3);
  Checkpoint a, b;
  save_codec(a, codec);
  save_codec(b, again);
  EXPECT_EQ(a.serialize(), b.serialize());
}

TEST(RvqTrain, InProjectionIsOrthonormal) {
  auto codec = rvq_train(Corpus(100, 16, 4), 2, 8, 5);
  for (const auto& s : codec.stages) {
    Eigen::MatrixXd g = as_matrix(s.in_proj).transpose() * as_matrix(s.in_proj);
    EXPECT_LT((g - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RvqTrain, RejectsSmallCorpus) { EXPECT_THROW(rvq_train(Corpus(10, 16, 1), 1, 32, 0), ContractError); }

TEST(RvqEncode, DeterministicShapeAndDimCheck) {
  auto corpus = Corpus(300, 16, 6);
  auto codec = rvq_train(corpus, 3, 8, 7);
  auto a = rvq_encode(corpus, codec);
  auto b = rvq_encode(corpus, codec);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.Q, 3);
  EXPECT_EQ(a.T, 300);
  for (int v : a.tokens) EXPECT_LT(v, 8);
  EXPECT_THROW(rvq_encode(Tensor<double>::matrix(3, 15), codec), ContractError);
}

TEST(RvqEncode, MatchesExhaustivePathSearchOnCodecFrames) {
  const int K = 4, Q = 2;
  auto codec = rvq_train(Corpus(400, 16, 8), Q, K, 9);
  Rng rng(10);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Codegram path(Q, 1, K, 0);
    for (int q = 0; q < Q; ++q) path.at(q, 0) = static_cast<int>(rng.below(K));
    const auto frame = rvq_decode(path, codec);
    const auto enc = rvq_encode(frame, codec);
    const double got = Mse(rvq_decode(enc, codec), frame);
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b) {
        Codegram c(Q, 1, K, 0);
        c.at(0, 0) = a;
        c.at(1, 0) = b;
        best = std::min(best, Mse(rvq_decode(c, codec), frame));
      }
    EXPECT_LE(got, best + 1e-12);
    EXPECT_LE(got, Mse(rvq_decode(path, codec), frame) + 1e-12);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(RvqDecode, ZeroCodebooksGiveBiasSum) {
  auto codec = rvq_train(Corpus(200, 12, 11), 3, 4, 12);
  std::vector<double> bias_sum(12, 0.0);
  for (auto& s : codec.stages) {
    s.codebook.data.assign(s.codebook.size(), 0.0);
    s.refresh_decoded();
    for (std::size_t j = 0; j < 12; ++j) bias_sum[j] += s.out_bias[j];
  }
  Codegram cg(3, 2, 4, 1);
  auto out = rvq_decode(cg, codec);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(out.at(t, j), bias_sum[j], 1e-12);
}

TEST(RvqDecode, RejectsMask) {
  auto codec = rvq_train(Corpus(100, 12, 13), 1, 4, 14);
  auto cg = Codegram::all_masked(1, 3, 4);
  EXPECT_THROW(rvq_decode(cg, codec), ContractError);
}

TEST(RvqDecode, HeldOutErrorShrinksWithStages) {
  auto train = Corpus(800, 20, 15);
  auto held = Corpus(200, 20, 15 + 1000);
  auto codec = rvq_train(train, 4, 16, 16);
  // Same generator seed for centres; held-out noise differs.
  held = Corpus(1000, 20, 15);
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 1; s <= 4; ++s) {
    auto cg = rvq_encode(held, codec, s);
    const double e = Mse(rvq_decode(cg, codec, s), held);
    EXPECT_LE(e, prev + 1e-12);
    prev = e;
  }
}

TEST(RvqDecode, StagewiseLinearity) {
  auto corpus = Corpus(200, 12, 17);
  auto codec = rvq_train(corpus, 3, 8, 18);
  auto cg = rvq_encode(corpus, codec);
  auto full = rvq_decode(cg, codec);
  Tensor<double> sum = Tensor<double>::matrix(full.rows(), full.cols());
  for (int q = 0; q < 3; ++q) {
    CodecParams one = codec;
    one.Q = 1;
    one.stages = {codec.stages[static_cast<std::size_t>(q)]};
    Codegram single(1, cg.T, cg.K, 0);
    for (int t = 0; t < cg.T; ++t) single.at(0, t) = cg.at(q, t);
    auto part = rvq_decode(single, one);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += part.data[i];
  }
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(sum.data[i], full.data[i], 1e-6);
}

TEST(ExportEmbeddingInit, RowsAreDecodedCodePrefixes) {
  auto codec = rvq_train(Corpus(300, 16, 19), 2, 8, 20);
  auto full = export_embedding_init(codec, 16, 1);
  auto half = export_embedding_init(codec, 8, 1);
  for (int q = 0; q < 2; ++q) {
    const auto& s = codec.stages[static_cast<std::size_t>(q)];
    const auto& ft = full.tables[static_cast<std::size_t>(q)];
    const auto& ht = half.tables[static_cast<std::size_t>(q)];
    ASSERT_EQ(ft.rows(), 9u);
    for (std::size_t j = 0; j < 8; ++j) {
      // Independent recomputation of codebook[j] * out_proj + out_bias.
      for (std::size_t c = 0; c < 16; ++c) {
        double v = s.out_bias[c];
        for (std::size_t k = 0; k < 8; ++k) v += s.codebook.at(j, k) * s.out_proj.at(k, c);
        EXPECT_NEAR(ft.at(j, c), v, 1e-12);
        if (c < 8) EXPECT_EQ(ht.at(j, c), ft.at(j, c));
      }
      EXPECT_NE(std::vector<double>(ft.row(8).begin(), ft.row(8).end()),
                std::vector<double>(ft.row(j).begin(), ft.row(j).end()));
    }
    EXPECT_EQ(full.from_codec[static_cast<std::size_t>(q)][8], 0);
  }
  EXPECT_THROW(export_embedding_init(codec, 17, 1), ContractError);
}

TEST(CodecCheckpoint, RoundTripIsBitExact) {
  auto codec = rvq_train(Corpus(200, 12, 21), 3, 8, 22);
  Checkpoint ck;
  save_codec(ck, codec);
  const auto bytes = ck.serialize();
  auto back = load_codec(Checkpoint::deserialize(bytes));
  Checkpoint again;
  save_codec(again, back);
  EXPECT_EQ(again.serialize(), bytes);
  for (std::size_t q = 0; q < 3; ++q) EXPECT_EQ(back.stages[q].decoded, codec.stages[q].decoded);
}

}  // namespace
}  // namespace maskgram
