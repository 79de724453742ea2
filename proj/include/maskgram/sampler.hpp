// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Iterative confidence decoding with classifier-free guidance, and waveform
// restoration built on it.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "maskgram/audio.hpp"
#include "maskgram/codec.hpp"
#include "maskgram/features.hpp"
#include "maskgram/generator.hpp"
#include "maskgram/masking.hpp"
#include "maskgram/random.hpp"

namespace maskgram {

enum class ScoreMode { kLogit, kLogProb };

struct DecodeConfig {
  int iterations = 20;
  double guidance = 1.0;
  std::uint64_t seed = 0;
  int span_length = 0;  // 0 = token-level scoring
  double window_seconds = 4.0;
  double noise_v0 = 4.0;
  ScoreMode score = ScoreMode::kLogit;
  bool conditional_only = false;  // skip the null-condition pass entirely
  int griffin_lim_iters = 32;

  void validate() const {
    if (iterations < 1) throw ConfigError("decode iterations must be >= 1");
    if (guidance < 0.0) throw ConfigError("guidance w must be >= 0");
    if (span_length < 0) throw ConfigError("span_length must be >= 0");
    if (!(window_seconds > 0.0)) throw ConfigError("window_seconds must be positive");
    if (noise_v0 < 0.0) throw ConfigError("noise_v0 must be >= 0");
    if (griffin_lim_iters < 0) throw ConfigError("griffin_lim_iters must be >= 0");
  }
};

/// Elementwise (1 + w) l_c - w l_u, evaluated as l_c + w (l_c - l_u) so that
/// w = 0 and l_c = l_u return l_c bit for bit.
inline Tensor<double> guided_logits(const Tensor<double>& lc, const Tensor<double>& lu, double w) {
  MASKGRAM_REQUIRE(lc.shape == lu.shape, "guided_logits shape mismatch");
  Tensor<double> out(lc.shape);
  for (std::size_t i = 0; i < lc.size(); ++i) out.data[i] = lc.data[i] + w * (lc.data[i] - lu.data[i]);
  return out;
}

/// v0 (1 - i / (N - 1)); zero when N = 1.
inline double noise_variance(int i, int n, double v0 = 4.0) {
  MASKGRAM_REQUIRE(n >= 1 && i >= 0 && i < n, "iteration index out of range");
  if (n == 1) return 0.0;
  return v0 * (1.0 - static_cast<double>(i) / static_cast<double>(n - 1));
}

/// (codegram with MASK entries, use_null_condition) -> Q x T x K logits.
using LogitFn = std::function<Tensor<double>(const Codegram&, bool)>;

struct DecodeState {
  int iteration = 0;
  Codegram codegram;
  std::size_t initial_units = 0;  // M0, counted in scoring units
  Rng rng{0};

  std::size_t masked_positions() const { return codegram.masked_count(); }
};

struct DecodeTelemetry {
  std::vector<std::size_t> masked_after;  // masked positions after each step
};

inline DecodeState decode_start(int q, int t, int k, std::uint64_t seed, int span_length = 0) {
  MASKGRAM_REQUIRE(q >= 1 && t >= 1 && k >= 1, "decode grid must be non-empty");
  DecodeState s;
  s.codegram = Codegram::all_masked(q, t, k);
  const int l = span_length > 0 ? std::min(span_length, t) : 1;
  s.initial_units = static_cast<std::size_t>(q) * static_cast<std::size_t>((t + l - 1) / l);
  s.rng = Rng(seed);
  return s;
}

namespace detail {

/// Token drawn from softmax(row) and its confidence score.
inline std::pair<int, double> sample_token(const double* row, int k, ScoreMode mode, Rng& rng) {
  double mx = row[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
  double z = 0.0;
  for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
  double u = rng.uniform() * z;
  int tok = k - 1;
  for (int j = 0; j < k; ++j) {
    u -= std::exp(row[j] - mx);
    if (u < 0.0) {
      tok = j;
      break;
    }
  }
  const double score = mode == ScoreMode::kLogit ? row[tok] : row[tok] - mx - std::log(z);
  return {tok, score};
}

}  // namespace detail

/// One decoding iteration: sample every masked position from the guided
/// logits, then commit all but the floor(cos(pi (i+1) / 2N) M0) lowest-scoring
/// (noise-perturbed) units. Committed tokens are never revisited. With
/// span_length l > 0 a unit is a non-overlapping length-l span of one row,
/// scored by the maximum over its tokens.
inline void decode_step(DecodeState& state, const LogitFn& model, const DecodeConfig& cfg) {
  const int i = state.iteration;
  MASKGRAM_REQUIRE(i < cfg.iterations, "decoding already finished");
  ++state.iteration;
  Codegram& cg = state.codegram;
  if (cg.masked_count() == 0) return;
  const int q_n = cg.Q, t_n = cg.T, k = cg.K;

  Tensor<double> lg = model(cg, false);
  MASKGRAM_REQUIRE(lg.shape == (std::vector<std::size_t>{static_cast<std::size_t>(q_n), static_cast<std::size_t>(t_n),
                                                         static_cast<std::size_t>(k)}),
                   "model logits must be Q x T x K");
  if (!cfg.conditional_only) lg = guided_logits(lg, model(cg, true), cfg.guidance);

  std::vector<int> sampled(cg.tokens.size(), -1);
  std::vector<double> score(cg.tokens.size(), 0.0);
  for (int q = 0; q < q_n; ++q)
    for (int t = 0; t < t_n; ++t) {
      if (cg.at(q, t) != k) continue;
      const std::size_t pos = static_cast<std::size_t>(q * t_n + t);
      const auto [tok, s] = detail::sample_token(lg.data.data() + pos * static_cast<std::size_t>(k), k, cfg.score, state.rng);
      sampled[pos] = tok;
      score[pos] = s;
    }

  // Scoring units: single positions, or spans [s l, (s+1) l) within a row.
  const int l = cfg.span_length > 0 ? std::min(cfg.span_length, t_n) : 1;
  const int per_row = (t_n + l - 1) / l;
  struct Unit {
    int q, start, end;
    double score;
  };
  std::vector<Unit> masked_units;
  const double sigma = std::sqrt(noise_variance(i, cfg.iterations, cfg.noise_v0));
  for (int q = 0; q < q_n; ++q)
    for (int u = 0; u < per_row; ++u) {
      Unit unit{q, u * l, std::min(t_n, (u + 1) * l), -std::numeric_limits<double>::infinity()};
      bool any = false;
      for (int t = unit.start; t < unit.end; ++t) {
        const std::size_t pos = static_cast<std::size_t>(q * t_n + t);
        if (sampled[pos] < 0) continue;
        any = true;
        unit.score = std::max(unit.score, score[pos]);
      }
      if (!any) continue;
      if (sigma > 0.0) unit.score += sigma * state.rng.normal();
      masked_units.push_back(unit);
    }

  const std::size_t keep_masked = std::min(scheduled_masked(i, cfg.iterations, state.initial_units), masked_units.size());
  std::vector<std::size_t> order(masked_units.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return masked_units[a].score < masked_units[b].score; });
  for (std::size_t r = keep_masked; r < order.size(); ++r) {
    const Unit& unit = masked_units[order[r]];
    for (int t = unit.start; t < unit.end; ++t) {
      const std::size_t pos = static_cast<std::size_t>(unit.q * t_n + t);
      if (sampled[pos] >= 0) cg.tokens[pos] = sampled[pos];
    }
  }
}

/// N steps from an all-MASK Q x T codegram.
inline Codegram decode_iterative(const LogitFn& model, int q, int t, int k, const DecodeConfig& cfg,
                                 DecodeTelemetry* telemetry = nullptr) {
  cfg.validate();
  DecodeState state = decode_start(q, t, k, cfg.seed, cfg.span_length);
  for (int i = 0; i < cfg.iterations; ++i) {
    decode_step(state, model, cfg);
    if (telemetry) telemetry->masked_after.push_back(state.masked_positions());
  }
  MASKGRAM_REQUIRE(state.codegram.masked_count() == 0, "decoding finished with MASK tokens left");
  return state.codegram;
}

/// Logit source backed by a trained model and a fixed encoder condition.
template <class T>
LogitFn model_logit_fn(const MaskModel<T>& model, const ConditionState& condition) {
  return [&model, condition](const Codegram& cg, bool use_null) {
    return generator_logits(model, cg, use_null ? ConditionState::null_condition() : condition);
  };
}

/// Highest STFT bin whose mean power is within 30 dB of the strongest bin. Hann
/// leakage keeps stopband bins near -40 dB, so a deeper threshold overshoots.
inline std::size_t estimate_cutoff_bin(const ComplexFrames& spec) {
  MASKGRAM_REQUIRE(!spec.empty(), "empty spectrogram");
  std::vector<double> power(spec[0].size(), 0.0);
  for (const auto& frame : spec)
    for (std::size_t f = 0; f < frame.size(); ++f) power[f] += std::norm(frame[f]);
  const double peak = *std::max_element(power.begin(), power.end());
  std::size_t cut = 0;
  for (std::size_t f = 0; f < power.size(); ++f)
    if (power[f] > peak * 1e-3) cut = f;
  return cut;
}

/// Iterative magnitude-consistent phase estimation. Bins up to `keep_bins`
/// start from `init` phases; the rest start from random phases.
inline std::vector<double> griffin_lim(const Tensor<double>& magnitude, const ComplexFrames& init, std::size_t keep_bins,
                                       std::size_t n_fft, std::size_t hop, std::size_t length, int iters,
                                       std::uint64_t seed) {
  const std::size_t frames = magnitude.rows(), bins = magnitude.cols();
  MASKGRAM_REQUIRE(bins == n_fft / 2 + 1, "magnitude width does not match n_fft");
  MASKGRAM_REQUIRE(init.size() == frames, "phase initializer frame count mismatch");
  Rng rng(seed);
  ComplexFrames x(frames, std::vector<std::complex<double>>(bins));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t f = 0; f < bins; ++f) {
      const double phase = (f <= keep_bins && std::abs(init[t][f]) > 0.0) ? std::arg(init[t][f])
                                                                          : 2.0 * std::numbers::pi * rng.uniform();
      x[t][f] = std::polar(magnitude.at(t, f), phase);
    }
  std::vector<double> y = istft(x, n_fft, hop, length);
  for (int it = 0; it < iters; ++it) {
    const auto s = stft(y, n_fft, hop);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t f = 0; f < bins; ++f) {
        const double a = std::abs(s[t][f]);
        x[t][f] = a > 1e-12 ? s[t][f] * (magnitude.at(t, f) / a) : std::complex<double>(magnitude.at(t, f), 0.0);
      }
    y = istft(x, n_fft, hop, length);
  }
  return y;
}

struct RestoreTelemetry {
  bool resampled = false;
  std::vector<DecodeTelemetry> windows;
};

/// Non-overlapping windows (last one zero-padded): compressed STFT, eval-mode
/// encoder, iterative decoding, codec decode, decompression, phase
/// reconstruction, concatenation and trimming to the input length.
template <class T>
Waveform restore_waveform(const Waveform& distorted, const MaskModel<T>& model, const CodecParams& codec,
                          const AudioConfig& audio, const DecodeConfig& cfg, RestoreTelemetry* telemetry = nullptr) {
  cfg.validate();
  audio.validate();
  Waveform in = distorted;
  if (in.sample_rate_hz != audio.sample_rate) {
    in = resample(in, audio.sample_rate);
    if (telemetry) telemetry->resampled = true;
  }
  if (in.size() < static_cast<std::size_t>(audio.hop))
    throw ContractError("input has " + std::to_string(in.size()) + " samples, fewer than one hop (" +
                        std::to_string(audio.hop) + ")");
  MASKGRAM_REQUIRE(codec.channels == static_cast<int>(audio.channels()), "codec width does not match the STFT");
  MASKGRAM_REQUIRE(codec.Q == model.cfg.num_codebooks_Q && codec.K == model.cfg.vocab_K,
                   "codec and model disagree on Q or K");
  const auto win = static_cast<std::size_t>(std::llround(cfg.window_seconds * audio.sample_rate));
  MASKGRAM_REQUIRE(win >= static_cast<std::size_t>(audio.hop), "window shorter than one hop");
  const std::size_t windows = (in.size() + win - 1) / win;
  Waveform out;
  out.sample_rate_hz = audio.sample_rate;
  out.samples.reserve(windows * win);
  const auto n_fft = static_cast<std::size_t>(audio.n_fft), hop = static_cast<std::size_t>(audio.hop);
  for (std::size_t w = 0; w < windows; ++w) {
    Waveform seg;
    seg.sample_rate_hz = audio.sample_rate;
    seg.samples.assign(win, 0.0);
    const std::size_t begin = w * win, end = std::min(in.size(), begin + win);
    std::copy(in.samples.begin() + static_cast<std::ptrdiff_t>(begin),
              in.samples.begin() + static_cast<std::ptrdiff_t>(end), seg.samples.begin());
    const auto spec = stft(seg.samples, n_fft, hop);
    Tensor<double> feats = Tensor<double>::matrix(spec.size(), audio.channels());
    for (std::size_t t = 0; t < spec.size(); ++t)
      for (std::size_t f = 0; f < feats.cols(); ++f) feats.at(t, f) = std::pow(std::abs(spec[t][f]), audio.exponent);
    const auto enc = encode_speech(model, feats, Mode::kEval);
    DecodeConfig wcfg = cfg;
    wcfg.seed = derive_seed(cfg.seed, w);
    DecodeTelemetry dt;
    const Codegram cg = decode_iterative(model_logit_fn(model, enc.condition), codec.Q,
                                         static_cast<int>(feats.rows()), codec.K, wcfg, &dt);
    if (telemetry) telemetry->windows.push_back(std::move(dt));
    Tensor<double> mag = rvq_decode(cg, codec);
    for (double& v : mag.data) v = std::pow(std::max(v, 0.0), 1.0 / audio.exponent);
    const auto y = griffin_lim(mag, spec, estimate_cutoff_bin(spec), n_fft, hop, win, cfg.griffin_lim_iters,
                               derive_seed(wcfg.seed, 0x9f));
    out.samples.insert(out.samples.end(), y.begin(), y.end());
  }
  out.samples.resize(in.size());
  return out;
}

}  // namespace maskgram
