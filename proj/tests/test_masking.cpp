// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "maskgram/masking.hpp"

namespace maskgram {
namespace {

TEST(CosineRatio, Endpoints) {
  EXPECT_EQ(cosine_ratio(0.0), 1.0);
  EXPECT_NEAR(cosine_ratio(1.0), 0.0, 1e-15);
  EXPECT_NEAR(cosine_ratio(0.5), std::sqrt(2.0) / 2.0, 1e-12);
  EXPECT_THROW(cosine_ratio(-0.01), ContractError);
  EXPECT_THROW(cosine_ratio(1.01), ContractError);
}

TEST(CosineRatio, StrictlyDecreasing) {
  double prev = cosine_ratio(0.0);
  for (int i = 1; i <= 1000; ++i) {
    const double v = cosine_ratio(i / 1000.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(ScheduledMasked, Examples) {
  EXPECT_EQ(scheduled_masked(0, 20, 1000), 996u);
  EXPECT_EQ(scheduled_masked(19, 20, 1000), 0u);
  EXPECT_EQ(scheduled_masked(19, 20, 1), 0u);
}

TEST(TokenMask, ExactCountsAndDeterminism) {
  EXPECT_EQ(token_mask(9, 100, 0.5, 1).count(), 450u);
  EXPECT_EQ(token_mask(3, 7, 1.0, 2).count(), 21u);
  EXPECT_EQ(token_mask(4, 50, 0.3, 3).grid, token_mask(4, 50, 0.3, 3).grid);
  EXPECT_NE(token_mask(4, 50, 0.3, 3).grid, token_mask(4, 50, 0.3, 4).grid);
  EXPECT_THROW(token_mask(2, 2, 0.0, 1), ContractError);
}

TEST(TokenMask, PerPositionFrequencyMatchesRatio) {
  const int q = 2, t = 10, seeds = 10000;
  const double r = 0.3;
  std::vector<int> hits(q * t, 0);
  for (int s = 0; s < seeds; ++s) {
    auto p = token_mask(q, t, r, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < p.grid.size(); ++i) hits[i] += p.grid[i];
  }
  // round(20 * 0.3) = 6 of 20 cells, so each cell is masked with p = 0.3.
  const double sigma = std::sqrt(seeds * r * (1 - r));
  for (int h : hits) EXPECT_LT(std::abs(h - seeds * r), 3.0 * sigma + 1.0);
}

TEST(NumSpans, Examples) {
  EXPECT_EQ(num_spans(0.0, 100, 10), 0);
  EXPECT_EQ(num_spans(0.5, 100, 10), 7);
  EXPECT_EQ(num_spans(0.3, 40, 40), 1);
  EXPECT_EQ(num_spans(1.0, 40, 40), 1);
  EXPECT_THROW(num_spans(0.5, 10, 11), ContractError);
}

TEST(NumSpans, SmallestSatisfyingCount) {
  for (int t : {20, 100, 500})
    for (int l : {1, 3, 8})
      for (double r : {0.05, 0.3, 0.5, 0.8, 0.95}) {
        const int n = num_spans(r, t, l);
        const double keep = static_cast<double>(t - l) / t;
        EXPECT_GE(1.0 - std::pow(keep, n), r - 1e-12);
        EXPECT_LT(1.0 - std::pow(keep, n - 1), r);
      }
}

TEST(SpanMask, RunsStayInsideRows) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto p = span_mask(4, 60, 0.5, 7, s);
    EXPECT_EQ(p.mode, MaskMode::kSpan);
    for (int q = 0; q < 4; ++q) {
      int masked = 0;
      for (int t = 0; t < 60; ++t) masked += p.masked(q, t);
      EXPECT_LE(masked, std::min(p.row_spans[static_cast<std::size_t>(q)] * 7, 60));
      // Spans start inside [0, T-l], so no masked run is shorter than l.
      int run = 0;
      for (int t = 0; t <= 60; ++t) {
        if (t < 60 && p.masked(q, t)) {
          ++run;
        } else {
          if (run > 0) EXPECT_GE(run, 7);
          run = 0;
        }
      }
    }
  }
}

TEST(SpanMask, UnitSpanRealizesRatio) {
  const int t = 500;
  const double rg = 0.4;
  double sum = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) sum += span_mask(1, t, rg, 1, s).realized_ratio;
  EXPECT_NEAR(sum / 1000.0, rg, 0.05);
}

TEST(SpanMask, FullRatioCoversGrid) {
  // Edge cells are reachable from few start positions, so single draws can
  // leave a handful uncovered; the mean coverage is what the count targets.
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 500; ++s) sum += span_mask(3, 200, 1.0, 5, s).realized_ratio;
  EXPECT_GE(sum / 500.0, 0.99);
}

TEST(SpanMask, RowCountsWithinBounds) {
  for (int t : {100, 300}) {
    for (std::uint64_t s = 0; s < 1000; ++s) {
      auto p = span_mask(2, t, 0.5, 5, s);
      for (int q = 0; q < 2; ++q) {
        int masked = 0;
        for (int c = 0; c < t; ++c) masked += p.masked(q, c);
        const double rk = p.row_ratio[static_cast<std::size_t>(q)];
        EXPECT_GE(masked, rk * t * 0.6);
        EXPECT_LE(masked, p.row_spans[static_cast<std::size_t>(q)] * 5);
      }
    }
  }
}

TEST(SpanMask, UnitSpansMatchTokenMaskingFrequencies) {
  // Chi-square homogeneity test over positions, 2 x 20 contingency table.
  const int t = 20, seeds = 4000;
  std::vector<double> a(t, 0), b(t, 0);
  double ra = 0;
  for (int s = 0; s < seeds; ++s) {
    auto sp = span_mask(1, t, 0.4, 1, static_cast<std::uint64_t>(s));
    ra += sp.realized_ratio;
    for (int c = 0; c < t; ++c) a[static_cast<std::size_t>(c)] += sp.masked(0, c);
  }
  ra /= seeds;
  for (int s = 0; s < seeds; ++s) {
    auto tk = token_mask(1, t, ra, static_cast<std::uint64_t>(s + 100000));
    for (int c = 0; c < t; ++c) b[static_cast<std::size_t>(c)] += tk.masked(0, c);
  }
  const double na = std::accumulate(a.begin(), a.end(), 0.0), nb = std::accumulate(b.begin(), b.end(), 0.0);
  double chi2 = 0;
  for (int c = 0; c < t; ++c) {
    const double col = a[static_cast<std::size_t>(c)] + b[static_cast<std::size_t>(c)];
    const double ea = col * na / (na + nb), eb = col * nb / (na + nb);
    chi2 += (a[static_cast<std::size_t>(c)] - ea) * (a[static_cast<std::size_t>(c)] - ea) / ea;
    chi2 += (b[static_cast<std::size_t>(c)] - eb) * (b[static_cast<std::size_t>(c)] - eb) / eb;
  }
  // 19 degrees of freedom: the p = 0.01 critical value is 36.19.
  EXPECT_LT(chi2, 36.19);
}

TEST(TrainingMask, AlwaysMasksSomething) {
  for (std::uint64_t s = 0; s < 500; ++s) {
    EXPECT_GE(training_mask(2, 6, 0, s).count(), 1u);
    EXPECT_GE(training_mask(2, 6, 3, s).count(), 1u);
  }
}

}  // namespace
}  // namespace maskgram
