// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "gtest/gtest.h"
#include "maskgram/distortion.hpp"

namespace maskgram {
namespace {

Waveform Tone(double freq, int rate, std::size_t n) {
  Waveform w;
  w.sample_rate_hz = rate;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(0.5 * std::sin(2 * std::numbers::pi * freq * i / rate));
  return w;
}

double InteriorRms(const Waveform& w, std::size_t margin) {
  double s = 0;
  for (std::size_t i = margin; i + margin < w.size(); ++i) s += w.samples[i] * w.samples[i];
  return std::sqrt(s / static_cast<double>(w.size() - 2 * margin));
}

TEST(SynthClean, DeterministicAndNormalized) {
  auto a = synth_clean(4, 1.0, 16000);
  auto b = synth_clean(4, 1.0, 16000);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, synth_clean(5, 1.0, 16000).samples);
  double peak = 0;
  for (double v : a.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 0.5, 1e-6);
  EXPECT_EQ(a.size(), 16000u);
}

TEST(SynthClean, LittleEnergyNearNyquist) {
  for (int rate : {16000, 44100}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto w = synth_clean(seed, 1.0, rate);
      Eigen::FFT<double> fft;
      std::vector<std::complex<double>> spec;
      fft.fwd(spec, w.samples);
      double total = 0, high = 0;
      const std::size_t n = w.size();
      for (std::size_t k = 0; k <= n / 2; ++k) {
        const double e = std::norm(spec[k]);
        total += e;
        if (static_cast<double>(k) * rate / n > 0.9 * rate / 2.0) high += e;
      }
      EXPECT_LT(10 * std::log10(high / total), -30.0);
    }
  }
}

TEST(AddNoise, HitsRequestedSnr) {
  auto clean = synth_clean(1, 0.5, 16000);
  auto noise = make_noise(2, 3000, 16000, NoiseColor::kPink);
  for (double snr : {-5.0, 0.0, 7.5, 20.0}) {
    auto mix = add_noise_snr(clean, noise, snr);
    std::vector<double> part(clean.size());
    for (std::size_t i = 0; i < part.size(); ++i) part[i] = mix.samples[i] - clean.samples[i];
    const double measured = 10 * std::log10(mean_power(clean.samples) / mean_power(part));
    EXPECT_NEAR(measured, snr, 0.01);
    if (snr == 0.0) EXPECT_NEAR(mean_power(part) / mean_power(clean.samples), 1.0, 1e-9);
    if (snr == 20.0) EXPECT_NEAR(mean_power(part) / mean_power(clean.samples), 0.01, 1e-9);
  }
  Waveform silent{std::vector<double>(10, 0.0), 16000};
  EXPECT_THROW(add_noise_snr(clean, silent, 0.0), ContractError);
}

TEST(Bandlimit, NyquistPassesThrough) {
  auto w = synth_clean(3, 0.3, 16000);
  auto y = bandlimit(w, 8000.0);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LT(std::abs(y.samples[i] - w.samples[i]), 1e-3);
}

TEST(Bandlimit, PassAndStopBands) {
  for (int rate : {16000, 44100}) {
    for (double cutoff : {1000.0, 2500.0, 4000.0}) {
      auto pass = Tone(2.0 * cutoff / 3.0, rate, static_cast<std::size_t>(rate));
      auto stop = Tone(1.5 * cutoff, rate, static_cast<std::size_t>(rate));
      const double gp = InteriorRms(bandlimit(pass, cutoff), 300) / InteriorRms(pass, 300);
      const double gs = InteriorRms(bandlimit(stop, cutoff), 300) / InteriorRms(stop, 300);
      EXPECT_NEAR(gp, 1.0, 0.02) << rate << " " << cutoff;
      EXPECT_LT(20 * std::log10(gs), -40.0) << rate << " " << cutoff;
    }
  }
}

TEST(Bandlimit, IsTimeAligned) {
  auto w = Tone(300, 16000, 4000);
  auto y = bandlimit(w, 3000);
  for (std::size_t i = 500; i < 3500; ++i) EXPECT_NEAR(y.samples[i], w.samples[i], 5e-3);
}

TEST(Clip, Examples) {
  auto w = synth_clean(6, 0.2, 16000);
  EXPECT_EQ(clip(w, 1.0).samples, w.samples);
  auto c = clip(w, 0.5);
  double peak = 0;
  for (double v : c.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 0.25, 1e-12);
  // The threshold follows the input's peak, so a second pass at the same
  // absolute limit (ratio 1 of the clipped peak) is a no-op.
  EXPECT_EQ(clip(c, 1.0).samples, c.samples);
}

TEST(Rir, DirectPathAndEnvelope) {
  auto h = synth_rir(0.4, 16000, 1);
  EXPECT_EQ(h[0], 1.0);
  EXPECT_EQ(h.size(), static_cast<std::size_t>(std::ceil(1.2 * 0.4 * 16000)));
  EXPECT_NEAR(rir_envelope(0.4, 0.4) / rir_envelope(0.0, 0.4), 1e-3, 1e-12);
  EXPECT_EQ(h, synth_rir(0.4, 16000, 1));
}

TEST(Rir, SchroederDecaySlope) {
  for (double rt60 : {0.3, 0.6}) {
    auto h = synth_rir(rt60, 16000, 7);
    h[0] = 0.0;  // Tail only.
    std::vector<double> edc(h.size());
    double acc = 0;
    for (std::size_t i = h.size(); i-- > 0;) {
      acc += h[i] * h[i];
      edc[i] = acc;
    }
    // Fit slope between -5 and -25 dB of the Schroeder curve.
    const double e0 = edc[1];
    std::vector<double> xs, ys;
    for (std::size_t i = 1; i < h.size(); ++i) {
      const double db = 10 * std::log10(edc[i] / e0);
      if (db < -5 && db > -25) {
        xs.push_back(static_cast<double>(i) / 16000.0);
        ys.push_back(db);
      }
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    EXPECT_NEAR(sxy / sxx, -60.0 / rt60, 0.1 * 60.0 / rt60);
  }
}

TEST(ApplyDistortion, DisabledStagesReturnClean) {
  auto w = synth_clean(8, 0.5, 16000);
  EXPECT_EQ(apply_distortion(w, {}, DistortionSpec::none()).samples, w.samples);
}

TEST(ApplyDistortion, ClipOnlyMatchesClip) {
  auto w = synth_clean(9, 0.5, 16000);
  DistortionSpec s;
  s.clipping = true;
  s.clip_ratio = 0.3;
  EXPECT_EQ(apply_distortion(w, {}, s).samples, clip(w, 0.3).samples);
}

TEST(ApplyDistortion, FullChainDeterministicAndBounded) {
  auto w = synth_clean(10, 1.0, 16000);
  for (auto& v : w.samples) v *= 1.9;  // push the peak past the limiter
  DistortionSpec s;
  s.reverb = s.noise = s.clipping = s.band_limit = true;
  s.reverb_rt60_s = 0.5;
  s.snr_db = -5;
  s.clip_ratio = 0.5;
  s.bandwidth_hz = 2000;
  s.seed = 33;
  auto a = apply_distortion(w, {}, s);
  auto b = apply_distortion(w, {}, s);
  EXPECT_EQ(a.samples, b.samples);
  for (double v : a.samples) EXPECT_LE(std::abs(v), 0.99 + 1e-12);
  s.snr_db = 30;
  EXPECT_THROW(apply_distortion(w, {}, s), ContractError);
}

TEST(Lsd, Examples) {
  auto x = synth_clean(11, 0.5, 16000);
  for (auto& v : x.samples) v += 0.01 * std::sin(static_cast<double>(&v - x.samples.data()));
  EXPECT_EQ(lsd(x, x), 0.0);
  // White noise keeps every bin far above eps.
  auto n = make_noise(12, 8000, 16000, NoiseColor::kWhite);
  auto n10 = n;
  for (auto& v : n10.samples) v *= 10.0;
  EXPECT_NEAR(lsd(n, n10), 2.0, 1e-6);
  auto y = bandlimit(x, 2000);
  EXPECT_EQ(lsd(x, y), lsd(y, x));
  Waveform shorter{std::vector<double>(x.size() - 1), 16000};
  EXPECT_THROW(lsd(x, shorter), ContractError);
}

TEST(Lsd, NonIncreasingInBandwidth) {
  std::vector<double> cutoffs = {1000, 2000, 3000, 4000, 6000, 8000};
  std::vector<double> mean(cutoffs.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = synth_clean(seed, 0.5, 16000);
    for (std::size_t i = 0; i < cutoffs.size(); ++i) mean[i] += lsd(x, bandlimit(x, cutoffs[i])) / 20.0;
  }
  for (std::size_t i = 1; i < mean.size(); ++i) EXPECT_LE(mean[i], mean[i - 1]);
}

}  // namespace
}  // namespace maskgram
