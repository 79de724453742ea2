// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Training masks over a Q x T codegram (token level and span level) and the
// cosine schedule that inference reuses for re-masking.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "maskgram/error.hpp"
#include "maskgram/random.hpp"

namespace maskgram {

/// cos(pi * u / 2) for progress u in [0, 1].
inline double cosine_ratio(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw ContractError("cosine_ratio progress must lie in [0, 1]");
  return std::cos(std::numbers::pi * u / 2.0);
}

/// Positions still masked after decoding iteration i of N, starting from M0.
inline std::size_t scheduled_masked(int i, int n, std::size_t m0) {
  MASKGRAM_REQUIRE(n >= 1 && i >= 0 && i < n, "iteration index out of range");
  const double r = cosine_ratio(static_cast<double>(i + 1) / static_cast<double>(n));
  return static_cast<std::size_t>(std::floor(r * static_cast<double>(m0)));
}

enum class MaskMode { kToken, kSpan };

struct MaskPlan {
  int Q = 0;
  int T = 0;
  std::vector<std::uint8_t> grid;  // Q x T, 1 = masked
  double realized_ratio = 0.0;
  MaskMode mode = MaskMode::kToken;
  int span_length = 1;
  std::vector<double> row_ratio;  // span mode: r_k per codebook row
  std::vector<int> row_spans;     // span mode: spans placed per row

  bool masked(int q, int t) const { return grid[static_cast<std::size_t>(q * T + t)] != 0; }

  std::size_t count() const { return static_cast<std::size_t>(std::accumulate(grid.begin(), grid.end(), 0)); }

  void update_ratio() {
    realized_ratio = grid.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(grid.size());
  }
};

/// Exactly round(Q*T*r) positions, uniformly without replacement.
inline MaskPlan token_mask(int q, int t, double r, std::uint64_t seed) {
  MASKGRAM_REQUIRE(q >= 1 && t >= 1, "mask grid must be non-empty");
  MASKGRAM_REQUIRE(r > 0.0 && r <= 1.0, "token mask ratio must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(q) * static_cast<std::size_t>(t);
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r));
  MaskPlan plan;
  plan.Q = q;
  plan.T = t;
  plan.grid.assign(n, 0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
    plan.grid[idx[i]] = 1;
  }
  plan.update_ratio();
  return plan;
}

/// Smallest n with 1 - ((T-l)/T)^n >= r_k: the expected union coverage of n
/// uniformly placed length-l spans. Full coverage is unreachable in
/// expectation for l < T, so the target is capped half a frame below T.
inline int num_spans(double r_k, int t, int l) {
  MASKGRAM_REQUIRE(r_k >= 0.0 && r_k <= 1.0, "codebook mask ratio must lie in [0, 1]");
  MASKGRAM_REQUIRE(t >= 1, "sequence length must be positive");
  if (l > t) throw ContractError("span length " + std::to_string(l) + " exceeds sequence length " + std::to_string(t));
  MASKGRAM_REQUIRE(l >= 1, "span length must be positive");
  if (r_k <= 0.0) return 0;
  if (l == t) return 1;
  const double target = std::min(r_k, 1.0 - 0.5 / static_cast<double>(t));
  const double keep = static_cast<double>(t - l) / static_cast<double>(t);
  int n = 0;
  double uncovered = 1.0;
  while (1.0 - uncovered < target) {
    uncovered *= keep;
    ++n;
  }
  return n;
}

/// Span masking: a token-level draw at ratio r_g fixes the per-row ratio
/// r_k; each row then receives num_spans(r_k, T, l) spans with uniform start
/// positions in [0, T-l], masking their union.
inline MaskPlan span_mask(int q, int t, double r_g, int l, std::uint64_t seed) {
  MASKGRAM_REQUIRE(l >= 1 && l <= t, "span length must lie in [1, T]");
  const MaskPlan draft = token_mask(q, t, r_g, derive_seed(seed, 0));
  MaskPlan plan;
  plan.Q = q;
  plan.T = t;
  plan.mode = MaskMode::kSpan;
  plan.span_length = l;
  plan.grid.assign(draft.grid.size(), 0);
  Rng rng(derive_seed(seed, 1));
  for (int row = 0; row < q; ++row) {
    int hits = 0;
    for (int c = 0; c < t; ++c) hits += draft.masked(row, c) ? 1 : 0;
    const double r_k = static_cast<double>(hits) / static_cast<double>(t);
    const int n = num_spans(r_k, t, l);
    plan.row_ratio.push_back(r_k);
    plan.row_spans.push_back(n);
    for (int s = 0; s < n; ++s) {
      const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(t - l + 1)));
      for (int c = start; c < start + l; ++c) plan.grid[static_cast<std::size_t>(row * t + c)] = 1;
    }
  }
  plan.update_ratio();
  return plan;
}

/// Per-sample training mask: u ~ U(0,1), ratio cos(pi u / 2), at least one
/// masked position. span_length 0 selects token masking.
inline MaskPlan training_mask(int q, int t, int span_length, std::uint64_t seed) {
  Rng rng(seed);
  const double floor_ratio = 1.0 / (static_cast<double>(q) * static_cast<double>(t));
  const double r = std::max(cosine_ratio(rng.uniform()), floor_ratio);
  const std::uint64_t child = rng.next_u64();
  if (span_length <= 0) return token_mask(q, t, r, child);
  return span_mask(q, t, r, std::min(span_length, t), child);
}

}  // namespace maskgram
