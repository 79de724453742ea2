// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen stand-in for a self-supervised speech teacher: per-frame log band
// energies pushed through a seeded stack of tanh projections. Its layers are
// the source of every semantic distillation target.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "maskgram/audio.hpp"
#include "maskgram/error.hpp"
#include "maskgram/features.hpp"
#include "maskgram/instrumentation.hpp"
#include "maskgram/kmeans.hpp"
#include "maskgram/nn.hpp"
#include "maskgram/random.hpp"

namespace maskgram {

enum class KdVariant { kNone, kL9K500, kL9Feature, kAvgFeature, kStftFull, kStftLow };

inline std::string_view to_string(KdVariant v) {
  switch (v) {
    case KdVariant::kNone: return "none";
    case KdVariant::kL9K500: return "l9-k500";
    case KdVariant::kL9Feature: return "l9-feature";
    case KdVariant::kAvgFeature: return "avg-feature";
    case KdVariant::kStftFull: return "stft-full";
    case KdVariant::kStftLow: return "stft-low";
  }
  return "?";
}

inline KdVariant parse_kd_variant(std::string_view s) {
  for (auto v : {KdVariant::kNone, KdVariant::kL9K500, KdVariant::kL9Feature, KdVariant::kAvgFeature,
                 KdVariant::kStftFull, KdVariant::kStftLow})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown KD variant '" + std::string(s) +
                    "' (expected none, l9-k500, l9-feature, avg-feature, stft-full, stft-low)");
}

inline bool is_spectral(KdVariant v) { return v == KdVariant::kStftFull || v == KdVariant::kStftLow; }

struct TeacherParams {
  std::uint64_t seed = 0;
  int n_layers = 12;
  int feat_dim = 32;
  int frame_samples = 320;
  int sample_rate_hz = 16000;
  int bands = 16;
  std::vector<Tensor<double>> weights;  // layer i: in x feat_dim
  std::vector<std::vector<double>> biases;

  /// Deterministic function of the arguments; never trained.
  static TeacherParams create(std::uint64_t seed, int n_layers = 12, int feat_dim = 32,
                              int frame_samples = 320, int bands = 16) {
    MASKGRAM_REQUIRE(n_layers >= 1 && feat_dim >= 1 && frame_samples >= 2 && bands >= 1,
                     "invalid teacher dimensions");
    TeacherParams p;
    p.seed = seed;
    p.n_layers = n_layers;
    p.feat_dim = feat_dim;
    p.frame_samples = frame_samples;
    p.bands = bands;
    Rng rng(derive_seed(seed, 0x7eac));
    // Sub-unit gain keeps deep layers out of the chaotic tanh regime.
    constexpr double kGain = 0.8;
    for (int i = 0; i < n_layers; ++i) {
      const std::size_t in = i == 0 ? static_cast<std::size_t>(bands) : static_cast<std::size_t>(feat_dim);
      Tensor<double> w = Tensor<double>::matrix(in, static_cast<std::size_t>(feat_dim));
      const double sd = kGain / std::sqrt(static_cast<double>(in));
      for (auto& x : w.data) x = rng.normal(0.0, sd);
      std::vector<double> b(static_cast<std::size_t>(feat_dim));
      for (auto& x : b) x = rng.normal(0.0, 0.2);
      p.weights.push_back(std::move(w));
      p.biases.push_back(std::move(b));
    }
    return p;
  }
};

/// Per-frame log band energies: non-overlapping Hann frames of
/// `frame_samples`, power spectrum split into `bands` equal-width bands.
/// The default 16 bands (500 Hz) follow the envelope, not single harmonics.
inline Tensor<double> teacher_input_features(const Waveform& wave, const TeacherParams& p) {
  const std::size_t fs = static_cast<std::size_t>(p.frame_samples);
  const std::size_t frames = wave.size() / fs;
  MASKGRAM_REQUIRE(frames >= 1, "waveform shorter than one teacher frame");
  const std::size_t bins = fs / 2;
  const auto window = hann_window(fs);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(fs);
  std::vector<std::complex<double>> spec;
  Tensor<double> out = Tensor<double>::matrix(frames, static_cast<std::size_t>(p.bands));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < fs; ++i) buf[i] = wave.samples[t * fs + i] * window[i];
    fft.fwd(spec, buf);
    for (std::size_t b = 0; b < static_cast<std::size_t>(p.bands); ++b) {
      const std::size_t lo = 1 + b * bins / static_cast<std::size_t>(p.bands);
      const std::size_t hi = 1 + (b + 1) * bins / static_cast<std::size_t>(p.bands);
      double e = 0.0;
      for (std::size_t k = lo; k < hi; ++k) e += std::norm(spec[k]);
      e /= static_cast<double>(std::max<std::size_t>(hi - lo, 1));
      // Centered to roughly unit range for typical speech levels.
      out.at(t, b) = (std::log10(e + 1e-6) + 3.0) / 2.0;
    }
  }
  return out;
}

/// All teacher layers for a 16 kHz waveform, layer_i = tanh(layer_{i-1} W_i + b_i).
inline std::vector<FeatureSequence> teacher_layers(const Waveform& wave16k, const TeacherParams& p) {
  if (wave16k.sample_rate_hz != p.sample_rate_hz)
    throw ContractError("teacher expects " + std::to_string(p.sample_rate_hz) + " Hz input, got " +
                        std::to_string(wave16k.sample_rate_hz) + " Hz; resample first");
  ++counters::teacher_evaluations;
  Tensor<double> x = teacher_input_features(wave16k, p);
  std::vector<FeatureSequence> layers;
  layers.reserve(static_cast<std::size_t>(p.n_layers));
  for (int i = 0; i < p.n_layers; ++i) {
    const auto& w = p.weights[static_cast<std::size_t>(i)];
    const auto& b = p.biases[static_cast<std::size_t>(i)];
    Tensor<double> y = Tensor<double>::matrix(x.rows(), w.cols());
    as_matrix(y).noalias() = as_matrix(x) * as_matrix(w);
    for (std::size_t t = 0; t < y.rows(); ++t)
      for (std::size_t j = 0; j < y.cols(); ++j) y.at(t, j) = std::tanh(y.at(t, j) + b[j]);
    layers.push_back({y, static_cast<double>(p.sample_rate_hz) / p.frame_samples, ChannelMeaning::kTeacherLayer});
    x = std::move(y);
  }
  return layers;
}

struct TeacherTarget {
  bool discrete = false;
  std::vector<int> tokens;  // T_t ids when discrete
  Tensor<double> feats;     // T_t x C_t when continuous
  KdVariant variant = KdVariant::kNone;

  std::size_t frames() const { return discrete ? tokens.size() : feats.rows(); }
};

/// Elementwise mean of all layers (before normalization).
inline Tensor<double> average_layers(const std::vector<FeatureSequence>& layers) {
  MASKGRAM_REQUIRE(!layers.empty(), "no teacher layers");
  // Running mean: identical layers average to themselves bit for bit.
  Tensor<double> acc = layers[0].frames;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    MASKGRAM_REQUIRE(layers[i].frames.shape == acc.shape, "teacher layers differ in shape");
    const double inv = 1.0 / static_cast<double>(i + 1);
    for (std::size_t j = 0; j < acc.size(); ++j) acc.data[j] += (layers[i].frames.data[j] - acc.data[j]) * inv;
  }
  return acc;
}

/// Builds the distillation target for one clean sample. `layer_index` is
/// 1-based. Spectral variants take the (already low-band-sliced if needed)
/// compressed STFT of the target and ignore the teacher layers.
inline TeacherTarget select_kd_target(const std::vector<FeatureSequence>& layers, KdVariant variant,
                                      const KMeansCodebook* codebook = nullptr,
                                      const FeatureSequence* stft_target = nullptr, int layer_index = 9) {
  TeacherTarget out;
  out.variant = variant;
  auto layer = [&]() -> const Tensor<double>& {
    MASKGRAM_REQUIRE(layer_index >= 1 && static_cast<std::size_t>(layer_index) <= layers.size(),
                     "teacher layer index out of range");
    return layers[static_cast<std::size_t>(layer_index - 1)].frames;
  };
  switch (variant) {
    case KdVariant::kNone:
      throw ContractError("select_kd_target called for KD variant 'none'");
    case KdVariant::kL9Feature:
      out.feats = per_channel_normalize(layer());
      break;
    case KdVariant::kAvgFeature:
      out.feats = per_channel_normalize(average_layers(layers));
      break;
    case KdVariant::kL9K500:
      if (!codebook) throw ContractError("KD variant l9-k500 needs a trained k-means codebook");
      out.discrete = true;
      out.tokens = kmeans_assign(layer(), *codebook);
      break;
    case KdVariant::kStftFull:
    case KdVariant::kStftLow:
      if (!stft_target) throw ContractError("spectral KD variants need an STFT target");
      out.feats = per_channel_normalize(stft_target->frames);
      break;
  }
  return out;
}

/// Per-frame mean KD loss of an already pooled and projected prediction:
/// cross-entropy for discrete targets, MSE otherwise.
inline double kd_loss(const Tensor<double>& prediction, const TeacherTarget& target) {
  if (prediction.rows() != target.frames())
    throw ContractError("KD prediction has " + std::to_string(prediction.rows()) + " frames, target has " +
                        std::to_string(target.frames()));
  if (target.discrete) {
    Tensor<double> logits({1, prediction.rows(), prediction.cols()}, prediction.data);
    std::vector<std::uint8_t> all(target.tokens.size(), 1);
    return masked_cross_entropy(logits, target.tokens, all).value;
  }
  return mse_loss(prediction, target.feats);
}

}  // namespace maskgram
