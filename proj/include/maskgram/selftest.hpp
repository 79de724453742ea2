// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Fast in-process invariant checks behind `maskgram selftest`.

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "maskgram/audio.hpp"
#include "maskgram/codec.hpp"
#include "maskgram/gradcheck.hpp"
#include "maskgram/kmeans.hpp"
#include "maskgram/masking.hpp"
#include "maskgram/sampler.hpp"

namespace maskgram {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline LogitFn hashed_logits(std::uint64_t seed) {
  return [seed](const Codegram& cg, bool null) {
    std::uint64_t h = seed;
    for (int v : cg.tokens) h = mix_seed(h ^ static_cast<std::uint64_t>(v + 1));
    Rng rng(h);
    Tensor<double> out(
        {static_cast<std::size_t>(cg.Q), static_cast<std::size_t>(cg.T), static_cast<std::size_t>(cg.K)});
    for (auto& v : out.data) v = 2.0 * rng.normal() + (null ? 0.0 : 0.5);
    return out;
  };
}

inline Tensor<double> gaussian_frames(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t = Tensor<double>::matrix(n, c);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

inline SelftestResult check_schedule() {
  DecodeConfig cfg;
  for (int m0 : {1, 7, 1000}) {
    DecodeTelemetry tel;
    decode_iterative(hashed_logits(1), 1, m0, 16, cfg, &tel);
    for (int i = 0; i < cfg.iterations; ++i) {
      const auto want = static_cast<std::size_t>(
          std::floor(std::cos(std::numbers::pi * (i + 1) / (2.0 * cfg.iterations)) * m0));
      if (tel.masked_after[static_cast<std::size_t>(i)] != want)
        return {"decode schedule", false, "M0=" + std::to_string(m0) + " diverges at i=" + std::to_string(i)};
    }
  }
  return {"decode schedule", true, "M0 in {1, 7, 1000}"};
}

inline SelftestResult check_guidance() {
  DecodeConfig a;
  a.guidance = 0.0;
  a.seed = 3;
  DecodeConfig b = a;
  b.conditional_only = true;
  const bool same = decode_iterative(hashed_logits(2), 2, 30, 12, a) == decode_iterative(hashed_logits(2), 2, 30, 12, b);
  return {"guidance w=0 identity", same, same ? "bit-identical" : "decodes differ"};
}

inline SelftestResult check_embedding_init() {
  const auto codec = rvq_train(gaussian_frames(300, 16, 4), 2, 8, 5);
  const auto init = export_embedding_init(codec, 12, 6);
  for (int q = 0; q < 2; ++q) {
    const auto& st = codec.stages[static_cast<std::size_t>(q)];
    const auto& tab = init.tables[static_cast<std::size_t>(q)];
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t c = 0; c < 12; ++c) {
        double v = st.out_bias[c];
        for (std::size_t k = 0; k < 8; ++k) v += st.codebook.at(j, k) * st.out_proj.at(k, c);
        if (std::abs(v - tab.at(j, c)) > 1e-12) return {"embedding init", false, "row mismatch"};
      }
  }
  return {"embedding init", true, "rows equal projected codes"};
}

inline SelftestResult check_span_masking() {
  if (num_spans(0.5, 100, 10) != 7) return {"span masking", false, "num_spans(0.5, 100, 10) != 7"};
  double sum = 0;
  for (std::uint64_t s = 0; s < 200; ++s) sum += span_mask(2, 500, 0.5, 5, s).realized_ratio;
  const double mean = sum / 200;
  return {"span masking", std::abs(mean - 0.5) <= 0.05, "mean ratio " + std::to_string(mean)};
}

inline SelftestResult check_rvq() {
  const auto frames = gaussian_frames(400, 12, 7);
  const auto codec = rvq_train(frames, 4, 16, 8);
  for (std::size_t i = 1; i < codec.train_mse.size(); ++i)
    if (codec.train_mse[i] > codec.train_mse[i - 1]) return {"rvq", false, "stage MSE increased"};
  const bool det = rvq_encode(frames, codec) == rvq_encode(frames, codec);
  return {"rvq", det, det ? "MSE non-increasing, encode deterministic" : "encode not deterministic"};
}

inline SelftestResult check_kmeans() {
  Tensor<double> x({4, 1}, std::vector<double>{0, 1, 8, 9});
  const auto cb = kmeans_fit(x, 2, 50, 1);
  std::vector<double> c = {cb.centroids.data[0], cb.centroids.data[1]};
  std::sort(c.begin(), c.end());
  bool mono = true;
  for (std::size_t i = 1; i < cb.inertia_history.size(); ++i) mono = mono && cb.inertia_history[i] <= cb.inertia_history[i - 1];
  const bool ok = c[0] == 0.5 && c[1] == 8.5 && mono;
  return {"k-means", ok, ok ? "centroids {0.5, 8.5}" : "unexpected centroids"};
}

inline SelftestResult check_formats() {
  const auto codec = rvq_train(gaussian_frames(100, 10, 9), 2, 4, 10);
  Checkpoint ck;
  save_codec(ck, codec);
  const auto bytes = ck.serialize();
  Checkpoint again;
  save_codec(again, load_codec(Checkpoint::deserialize(bytes)));
  if (again.serialize() != bytes) return {"formats", false, "codec checkpoint not bit-exact"};
  Waveform w{{0.1, -0.25, 1.0 / 3.0, 0.0}, 16000};
  for (auto& v : w.samples) v = static_cast<float>(v);
  const auto path = (std::filesystem::temp_directory_path() / "maskgram_selftest.wav").string();
  write_wav(path, w);
  const auto back = read_wav(path);
  std::filesystem::remove(path);
  const bool ok = back.samples == w.samples && back.sample_rate_hz == 16000;
  return {"formats", ok, ok ? "checkpoint and float WAV round-trip" : "WAV round-trip mismatch"};
}

inline SelftestResult check_gradients() {
  const auto r = gradcheck_suite();
  return {"gradients", r.passed(), "max relative error " + std::to_string(r.max_rel_error)};
}

}  // namespace detail

inline std::vector<std::function<SelftestResult()>> selftest_suites() {
  return {detail::check_schedule,      detail::check_guidance, detail::check_embedding_init,
          detail::check_span_masking,  detail::check_rvq,      detail::check_kmeans,
          detail::check_formats,       detail::check_gradients};
}

}  // namespace maskgram
