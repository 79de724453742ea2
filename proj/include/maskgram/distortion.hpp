// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic speech-like sources, the corruption chain (reverb, noise,
// clipping, band limiting) and the log-spectral distance.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "maskgram/audio.hpp"
#include "maskgram/error.hpp"
#include "maskgram/features.hpp"
#include "maskgram/random.hpp"

namespace maskgram {

/// Harmonic source with a drifting pitch, three moving formant emphases and
/// a syllable-like envelope with pauses. Peak-normalized to 0.5.
inline Waveform synth_clean(std::uint64_t seed, double duration_s, int sample_rate) {
  MASKGRAM_REQUIRE(duration_s > 0.0, "synth_clean duration must be positive");
  MASKGRAM_REQUIRE(sample_rate > 0, "sample rate must be positive");
  Rng rng(derive_seed(seed, 0x5e));
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  MASKGRAM_REQUIRE(n >= 1, "synth_clean duration shorter than one sample");
  const double fs = sample_rate, nyq = fs / 2.0;
  const double f0 = rng.uniform(90.0, 240.0);
  const double vib_rate = rng.uniform(0.3, 0.9), vib_phase = rng.uniform(0.0, 6.28);
  const double jit_rate = rng.uniform(1.5, 3.5), jit_phase = rng.uniform(0.0, 6.28);
  const double f0_max = f0 * 1.2;
  const int harmonics = std::max(1, static_cast<int>(std::floor(0.85 * nyq / f0_max)));

  // Formant centres wander between two targets each; scaled down for low rates.
  const double fscale = std::min(1.0, nyq / 8000.0);
  struct Formant {
    double lo, hi, rate, phase, bw, gain;
  };
  std::vector<Formant> formants = {
      {rng.uniform(250, 450), rng.uniform(600, 950), rng.uniform(1.0, 3.0), rng.uniform(0, 6.28), 90, 1.0},
      {rng.uniform(900, 1300), rng.uniform(1600, 2400), rng.uniform(0.8, 2.5), rng.uniform(0, 6.28), 130, 0.6},
      {rng.uniform(2300, 2800), rng.uniform(3000, 3600), rng.uniform(0.5, 1.5), rng.uniform(0, 6.28), 200, 0.3}};
  for (auto& f : formants) {
    f.lo *= fscale;
    f.hi *= fscale;
  }

  // Envelope: alternating voiced segments and pauses with 20 ms ramps.
  std::vector<double> env(n, 0.0);
  {
    std::size_t pos = static_cast<std::size_t>(rng.uniform(0.0, 0.08) * fs);
    const double ramp = 0.02 * fs;
    while (pos < n) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.15, 0.4) * fs);
      const double level = rng.uniform(0.5, 1.0);
      for (std::size_t i = 0; i < len && pos + i < n; ++i) {
        const double a = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(len - i) / ramp});
        env[pos + i] = level * (0.5 - 0.5 * std::cos(std::numbers::pi * a));
      }
      pos += len + static_cast<std::size_t>(rng.uniform(0.05, 0.2) * fs);
    }
  }

  Waveform w;
  w.sample_rate_hz = sample_rate;
  w.samples.assign(n, 0.0);
  std::vector<double> amps(static_cast<std::size_t>(harmonics));
  double phase = 0.0;
  constexpr std::size_t kControlHop = 32;
  double f_inst = f0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    if (i % kControlHop == 0) {
      f_inst = f0 * (1.0 + 0.1 * std::sin(2 * std::numbers::pi * vib_rate * t + vib_phase) +
                     0.05 * std::sin(2 * std::numbers::pi * jit_rate * t + jit_phase));
      for (int h = 1; h <= harmonics; ++h) {
        const double fh = h * f_inst;
        double a = 0.03 / std::sqrt(static_cast<double>(h));
        for (const auto& f : formants) {
          const double mix = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * f.rate * t * 0.5 + f.phase);
          const double centre = f.lo + (f.hi - f.lo) * mix;
          const double x = (fh - centre) / f.bw;
          a += f.gain / (1.0 + x * x);
        }
        amps[static_cast<std::size_t>(h - 1)] = a;
      }
    }
    phase += 2.0 * std::numbers::pi * f_inst / fs;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h) s += amps[static_cast<std::size_t>(h - 1)] * std::sin(h * phase);
    w.samples[i] = s * env[i];
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= 0.5 / peak;
  return w;
}

enum class NoiseColor { kWhite, kPink };

inline std::string_view to_string(NoiseColor c) { return c == NoiseColor::kWhite ? "white" : "pink"; }

inline NoiseColor parse_noise_color(std::string_view s) {
  if (s == "white") return NoiseColor::kWhite;
  if (s == "pink") return NoiseColor::kPink;
  throw ConfigError("unknown noise colour '" + std::string(s) + "' (expected white or pink)");
}

/// Seeded unit-variance noise; pink noise is white noise shaped by 1/sqrt(f).
inline Waveform make_noise(std::uint64_t seed, std::size_t n, int sample_rate, NoiseColor color) {
  Rng rng(derive_seed(seed, 0x401e));
  Waveform w;
  w.sample_rate_hz = sample_rate;
  w.samples.resize(n);
  for (auto& v : w.samples) v = rng.normal();
  if (color == NoiseColor::kPink && n > 1) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, w.samples);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const std::size_t f = std::min(k, n - k);
      spec[k] *= f == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(f));
    }
    std::vector<std::complex<double>> out;
    fft.inv(out, spec);
    double p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w.samples[i] = out[i].real();
      p += w.samples[i] * w.samples[i];
    }
    const double scale = p > 0.0 ? 1.0 / std::sqrt(p / static_cast<double>(n)) : 0.0;
    for (auto& v : w.samples) v *= scale;
  }
  return w;
}

inline double mean_power(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

/// clean + g * noise with 10 log10(P_clean / P_{g noise}) = snr_db over the
/// whole signal. Noise is looped or trimmed to the clean length.
inline Waveform add_noise_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  MASKGRAM_REQUIRE(!noise.samples.empty(), "noise signal is empty");
  std::vector<double> fitted(clean.size());
  for (std::size_t i = 0; i < fitted.size(); ++i) fitted[i] = noise.samples[i % noise.size()];
  const double pn = mean_power(fitted);
  if (!(pn > 0.0)) throw ContractError("noise signal is silent; cannot mix at a finite SNR");
  const double pc = mean_power(clean.samples);
  const double g = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  Waveform out = clean;
  for (std::size_t i = 0; i < fitted.size(); ++i) out.samples[i] += g * fitted[i];
  return out;
}

/// Linear-phase 255-tap Kaiser windowed-sinc low-pass with the group delay
/// removed. A cutoff at or above Nyquist passes the signal through.
inline Waveform bandlimit(const Waveform& wave, double cutoff_hz) {
  const double nyq = wave.sample_rate_hz / 2.0;
  MASKGRAM_REQUIRE(cutoff_hz > 0.0 && cutoff_hz <= nyq, "bandlimit cutoff must lie in (0, Nyquist]");
  if (cutoff_hz >= nyq) return wave;
  constexpr int kTaps = 255;
  constexpr int kHalf = kTaps / 2;
  constexpr double kBeta = 6.0;
  const double fc = cutoff_hz / wave.sample_rate_hz;  // cycles per sample
  std::vector<double> h(kTaps);
  double s = 0.0;
  for (int j = 0; j < kTaps; ++j) {
    const double m = j - kHalf;
    h[static_cast<std::size_t>(j)] = 2.0 * fc * detail::sinc(2.0 * fc * m) * detail::kaiser(m / kHalf, kBeta);
    s += h[static_cast<std::size_t>(j)];
  }
  for (auto& v : h) v /= s;
  Waveform out;
  out.sample_rate_hz = wave.sample_rate_hz;
  const long n = static_cast<long>(wave.size());
  out.samples.assign(wave.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    const long lo = std::max(0L, i - kHalf), hi = std::min(n - 1, i + kHalf);
    for (long k = lo; k <= hi; ++k) acc += h[static_cast<std::size_t>(k - i + kHalf)] * wave.samples[static_cast<std::size_t>(k)];
    out.samples[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Hard clamp to +-c times the signal's own peak.
inline Waveform clip(const Waveform& wave, double c) {
  MASKGRAM_REQUIRE(c > 0.0 && c <= 1.0, "clip ratio must lie in (0, 1]");
  double peak = 0.0;
  for (double v : wave.samples) peak = std::max(peak, std::abs(v));
  const double lim = c * peak;
  Waveform out = wave;
  for (double& v : out.samples) v = std::clamp(v, -lim, lim);
  return out;
}

/// Decay envelope of the synthetic RIR tail: -60 dB at t = rt60.
inline double rir_envelope(double t, double rt60_s) { return std::exp(-6.907755278982137 * t / rt60_s); }

/// Unit direct path followed by exponentially decaying white noise whose
/// energy equals the direct path (0 dB direct-to-reverberant ratio).
inline std::vector<double> synth_rir(double rt60_s, int sample_rate, std::uint64_t seed) {
  MASKGRAM_REQUIRE(rt60_s > 0.0, "rt60 must be positive");
  const auto len = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(1.2 * rt60_s * sample_rate)));
  Rng rng(derive_seed(seed, 0x717));
  std::vector<double> h(len, 0.0);
  double tail = 0.0;
  for (std::size_t i = 1; i < len; ++i) {
    h[i] = rng.normal() * rir_envelope(static_cast<double>(i) / sample_rate, rt60_s);
    tail += h[i] * h[i];
  }
  const double scale = tail > 0.0 ? 1.0 / std::sqrt(tail) : 0.0;
  for (std::size_t i = 1; i < len; ++i) h[i] *= scale;
  h[0] = 1.0;
  return h;
}

/// Linear convolution truncated to the length of `x`, via FFT.
inline std::vector<double> convolve_truncated(std::span<const double> x, std::span<const double> h) {
  const std::size_t full = x.size() + h.size() - 1;
  std::size_t n = 1;
  while (n < full) n <<= 1;
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> y;
  fft.inv(y, fa);
  y.resize(x.size());
  return y;
}

enum class Stage { kReverb, kNoise, kClip, kBandlimit };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kReverb: return "reverb";
    case Stage::kNoise: return "noise";
    case Stage::kClip: return "clip";
    case Stage::kBandlimit: return "bandlimit";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  for (auto st : {Stage::kReverb, Stage::kNoise, Stage::kClip, Stage::kBandlimit})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown distortion stage '" + std::string(s) + "'");
}

struct DistortionSpec {
  double snr_db = 10.0;
  double bandwidth_hz = 4000.0;
  double clip_ratio = 0.5;
  double reverb_rt60_s = 0.0;  // 0 disables reverb regardless of the flag
  std::uint64_t seed = 0;
  bool reverb = false;
  bool noise = false;
  bool clipping = false;
  bool band_limit = false;
  NoiseColor noise_color = NoiseColor::kPink;
  std::vector<Stage> order = {Stage::kReverb, Stage::kNoise, Stage::kClip, Stage::kBandlimit};

  void validate(int sample_rate) const {
    if (noise && (snr_db < -5.0 || snr_db > 20.0)) throw ContractError("snr_db outside [-5, 20]");
    if (band_limit && (bandwidth_hz < 1000.0 || bandwidth_hz > sample_rate / 2.0))
      throw ContractError("bandwidth_hz outside [1000, Nyquist]");
    if (clipping && (clip_ratio < 0.1 || clip_ratio > 0.5)) throw ContractError("clip_ratio outside [0.1, 0.5]");
    if (reverb_rt60_s < 0.0) throw ContractError("negative reverb_rt60_s");
  }

  static DistortionSpec none() { return {}; }
};

/// Runs the enabled stages in spec.order, then scales the result down if its
/// peak exceeds 0.99. An empty `noise` is synthesized from the spec seed.
inline Waveform apply_distortion(const Waveform& clean, const Waveform& noise, const DistortionSpec& spec) {
  spec.validate(clean.sample_rate_hz);
  Waveform x = clean;
  for (Stage st : spec.order) {
    switch (st) {
      case Stage::kReverb:
        if (spec.reverb && spec.reverb_rt60_s > 0.0) {
          const auto h = synth_rir(spec.reverb_rt60_s, x.sample_rate_hz, derive_seed(spec.seed, 1));
          x.samples = convolve_truncated(x.samples, h);
        }
        break;
      case Stage::kNoise:
        if (spec.noise) {
          const Waveform n = noise.samples.empty()
                                 ? make_noise(derive_seed(spec.seed, 2), x.size(), x.sample_rate_hz, spec.noise_color)
                                 : noise;
          x = add_noise_snr(x, n, spec.snr_db);
        }
        break;
      case Stage::kClip:
        if (spec.clipping) x = clip(x, spec.clip_ratio);
        break;
      case Stage::kBandlimit:
        if (spec.band_limit) x = bandlimit(x, spec.bandwidth_hz);
        break;
    }
  }
  double peak = 0.0;
  for (double v : x.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.99)
    for (double& v : x.samples) v *= 0.99 / peak;
  return x;
}

/// Mean over frames of the RMS (over bins) difference of log10 power
/// spectra, using 2048/512 STFTs and eps = 1e-8.
inline double lsd(const Waveform& reference, const Waveform& estimate) {
  if (reference.size() != estimate.size())
    throw ContractError("lsd needs equal lengths (" + std::to_string(reference.size()) + " vs " +
                        std::to_string(estimate.size()) + ")");
  MASKGRAM_REQUIRE(reference.sample_rate_hz == estimate.sample_rate_hz, "lsd needs equal sample rates");
  const auto a = stft(reference.samples, 2048, 512);
  const auto b = stft(estimate.samples, 2048, 512);
  constexpr double kEps = 1e-8;
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double s = 0.0;
    for (std::size_t f = 0; f < a[t].size(); ++f) {
      const double d = std::log10(std::norm(a[t][f]) + kEps) - std::log10(std::norm(b[t][f]) + kEps);
      s += d * d;
    }
    total += std::sqrt(s / static_cast<double>(a[t].size()));
  }
  return total / static_cast<double>(a.size());
}

}  // namespace maskgram
