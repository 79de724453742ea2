// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "maskgram/audio.hpp"
#include "maskgram/error.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

enum class ChannelMeaning { kStftCompressed, kEncoderLatent, kTeacherLayer, kCodecFeature };

struct FeatureSequence {
  Tensor<double> frames;  // T x C
  double frame_rate_hz = 0.0;
  ChannelMeaning meaning = ChannelMeaning::kStftCompressed;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t num_channels() const { return frames.cols(); }
};

using ComplexFrames = std::vector<std::vector<std::complex<double>>>;

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Frame count under center (n_fft/2 reflect) padding.
inline std::size_t stft_frame_count(std::size_t length, std::size_t hop) { return 1 + length / hop; }

namespace detail {

inline std::size_t reflect_index(long i, long len) {
  if (len == 1) return 0;
  const long period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - i);
}

}  // namespace detail

/// Complex STFT (n_fft/2+1 bins per frame) with reflect center padding and a
/// periodic Hann window.
inline ComplexFrames stft(std::span<const double> x, std::size_t n_fft, std::size_t hop) {
  MASKGRAM_REQUIRE(!x.empty(), "stft of an empty waveform");
  MASKGRAM_REQUIRE(hop >= 1 && n_fft >= hop, "stft requires n_fft >= hop >= 1");
  const std::size_t frames = stft_frame_count(x.size(), hop);
  const long pad = static_cast<long>(n_fft / 2);
  const auto window = hann_window(n_fft);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(n_fft);
  ComplexFrames out(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const long start = static_cast<long>(k * hop) - pad;
    for (std::size_t i = 0; i < n_fft; ++i)
      buf[i] = x[detail::reflect_index(start + static_cast<long>(i), static_cast<long>(x.size()))] * window[i];
    fft.fwd(out[k], buf);
  }
  return out;
}

/// Weighted overlap-add inverse of stft(); returns `length` samples.
inline std::vector<double> istft(const ComplexFrames& spec, std::size_t n_fft, std::size_t hop,
                                 std::size_t length) {
  MASKGRAM_REQUIRE(!spec.empty(), "istft of an empty spectrogram");
  const std::size_t pad = n_fft / 2;
  const std::size_t total = (spec.size() - 1) * hop + n_fft;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  const auto window = hann_window(n_fft);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame;
  std::vector<std::complex<double>> bins;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    bins = spec[k];
    fft.inv(frame, bins, n_fft);
    for (std::size_t i = 0; i < n_fft; ++i) {
      acc[k * hop + i] += frame[i] * window[i];
      norm[k * hop + i] += window[i] * window[i];
    }
  }
  std::vector<double> out(length, 0.0);
  for (std::size_t i = 0; i < length && i + pad < total; ++i) {
    const double w = norm[i + pad];
    out[i] = w > 1e-10 ? acc[i + pad] / w : 0.0;
  }
  return out;
}

/// STFT framing shared by the encoder input, the codec and resynthesis.
struct AudioConfig {
  int sample_rate = 16000;
  int n_fft = 512;
  int hop = 256;
  double exponent = 0.3;

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (hop < 1 || n_fft < hop || n_fft % 2 != 0) throw ConfigError("need an even n_fft >= hop >= 1");
    if (!(exponent > 0.0)) throw ConfigError("compression exponent must be positive");
  }

  std::size_t channels() const { return static_cast<std::size_t>(n_fft / 2 + 1); }
};

/// |STFT|^exponent, T = 1 + floor(len/hop) frames of n_fft/2+1 channels.
inline FeatureSequence stft_compressed(const Waveform& wave, std::size_t n_fft, std::size_t hop,
                                       double exponent = 0.3) {
  MASKGRAM_REQUIRE(!wave.samples.empty(), "stft_compressed of an empty waveform");
  const auto spec = stft(wave.samples, n_fft, hop);
  const std::size_t bins = n_fft / 2 + 1;
  FeatureSequence fs;
  fs.frames = Tensor<double>::matrix(spec.size(), bins);
  fs.frame_rate_hz = static_cast<double>(wave.sample_rate_hz) / static_cast<double>(hop);
  fs.meaning = ChannelMeaning::kStftCompressed;
  for (std::size_t t = 0; t < spec.size(); ++t)
    for (std::size_t f = 0; f < bins; ++f) fs.frames.at(t, f) = std::pow(std::abs(spec[t][f]), exponent);
  return fs;
}

/// Number of low bins kept for the 16 kHz spectral target: 372 of 1025 at the
/// reference resolution, the same proportion otherwise.
inline std::size_t low_band_bins(std::size_t channels) {
  if (channels == 1025) return 372;
  return static_cast<std::size_t>(std::lround(static_cast<double>(channels) * 372.0 / 1025.0));
}

inline FeatureSequence low_band_target(const FeatureSequence& feats) {
  const std::size_t keep = low_band_bins(feats.num_channels());
  MASKGRAM_REQUIRE(keep >= 1 && keep <= feats.num_channels(), "too few channels for a low-band target");
  FeatureSequence out = feats;
  out.frames = Tensor<double>::matrix(feats.num_frames(), keep);
  for (std::size_t t = 0; t < feats.num_frames(); ++t)
    for (std::size_t f = 0; f < keep; ++f) out.frames.at(t, f) = feats.frames.at(t, f);
  return out;
}

/// Output frame t = mean of input frames [floor(t*Tin/Tout), ceil((t+1)*Tin/Tout)).
inline Tensor<double> adaptive_avg_pool(const Tensor<double>& in, std::size_t t_out) {
  MASKGRAM_REQUIRE(t_out >= 1, "adaptive_avg_pool needs t_out >= 1");
  const std::size_t t_in = in.rows(), c = in.cols();
  MASKGRAM_REQUIRE(t_in >= 1, "adaptive_avg_pool of an empty sequence");
  Tensor<double> out = Tensor<double>::matrix(t_out, c);
  for (std::size_t t = 0; t < t_out; ++t) {
    const std::size_t lo = (t * t_in) / t_out;
    const std::size_t hi = ((t + 1) * t_in + t_out - 1) / t_out;
    for (std::size_t s = lo; s < hi; ++s)
      for (std::size_t j = 0; j < c; ++j) out.at(t, j) += in.at(s, j);
    for (std::size_t j = 0; j < c; ++j) out.at(t, j) /= static_cast<double>(hi - lo);
  }
  return out;
}

inline constexpr double kVarianceFloor = 1e-5;

/// Per-sample, per-channel standardization with population variance floored
/// at 1e-5.
inline Tensor<double> per_channel_normalize(const Tensor<double>& x) {
  const std::size_t frames = x.rows(), c = x.cols();
  MASKGRAM_REQUIRE(frames >= 1, "per_channel_normalize of an empty sequence");
  Tensor<double> out(x.shape);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += x.at(t, j);
    mean /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) var += (x.at(t, j) - mean) * (x.at(t, j) - mean);
    var = std::max(var / static_cast<double>(frames), kVarianceFloor);
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < frames; ++t) out.at(t, j) = (x.at(t, j) - mean) * inv;
  }
  return out;
}

enum class Mode { kTrain, kEval };

/// Running statistics of the per-bin batch normalization in front of the
/// speech encoder.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.01;

  static NormStats identity(std::size_t channels, double momentum = 0.01) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), momentum};
  }
};

/// Per-bin normalization of a batch of T_i x C feature matrices. Train mode
/// uses the statistics of all frames in the batch and folds them into the
/// running statistics; eval mode uses the running statistics. gain/bias may
/// be empty for the identity affine.
inline std::vector<Tensor<double>> per_bin_normalize(std::span<const Tensor<double>> batch, NormStats& stats,
                                                     Mode mode, std::span<const double> gain = {},
                                                     std::span<const double> bias = {}) {
  MASKGRAM_REQUIRE(!batch.empty(), "per_bin_normalize of an empty batch");
  const std::size_t c = stats.mean.size();
  for (const auto& f : batch) MASKGRAM_REQUIRE(f.cols() == c, "feature channels do not match norm stats");
  std::vector<double> mean = stats.mean, var = stats.var;
  if (mode == Mode::kTrain) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    std::size_t n = 0;
    for (const auto& f : batch) {
      n += f.rows();
      for (std::size_t t = 0; t < f.rows(); ++t)
        for (std::size_t j = 0; j < c; ++j) mean[j] += f.at(t, j);
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto& f : batch)
      for (std::size_t t = 0; t < f.rows(); ++t)
        for (std::size_t j = 0; j < c; ++j) var[j] += (f.at(t, j) - mean[j]) * (f.at(t, j) - mean[j]);
    for (auto& v : var) v /= static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) {
      stats.mean[j] = (1.0 - stats.momentum) * stats.mean[j] + stats.momentum * mean[j];
      stats.var[j] = (1.0 - stats.momentum) * stats.var[j] + stats.momentum * var[j];
    }
  }
  std::vector<Tensor<double>> out;
  out.reserve(batch.size());
  for (const auto& f : batch) {
    Tensor<double> y(f.shape);
    for (std::size_t t = 0; t < f.rows(); ++t) {
      for (std::size_t j = 0; j < c; ++j) {
        double v = (f.at(t, j) - mean[j]) / std::sqrt(std::max(var[j], kVarianceFloor));
        if (!gain.empty()) v *= gain[j];
        if (!bias.empty()) v += bias[j];
        y.at(t, j) = v;
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace maskgram
