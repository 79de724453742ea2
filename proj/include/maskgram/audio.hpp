// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "maskgram/error.hpp"

namespace maskgram {

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }

  void validate() const {
    MASKGRAM_REQUIRE(sample_rate_hz > 0, "sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw ContractError("waveform contains non-finite samples");
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

namespace detail {

inline void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

/// Writes a mono RIFF/WAVE file. PCM16 samples are clamped to [-1, 1].
inline void write_wav(const std::string& path, const Waveform& wave,
                      WavEncoding enc = WavEncoding::kFloat32) {
  const bool is_float = enc == WavEncoding::kFloat32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.samples.size() * (bits / 8));
  std::vector<char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(b, 16);
  detail::put_u16(b, is_float ? 3 : 1);
  detail::put_u16(b, 1);
  detail::put_u32(b, static_cast<std::uint32_t>(wave.sample_rate_hz));
  detail::put_u32(b, static_cast<std::uint32_t>(wave.sample_rate_hz) * (bits / 8));
  detail::put_u16(b, bits / 8);
  detail::put_u16(b, bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(b, data_bytes);
  for (double s : wave.samples) {
    if (is_float) {
      const float f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      detail::put_u32(b, u);
    } else {
      const double c = std::clamp(s, -1.0, 1.0);
      const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0));
      detail::put_u16(b, static_cast<std::uint16_t>(v));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw IoError("failed writing " + path);
}

/// Reads mono PCM16 or IEEE float32 WAV; anything else is rejected.
inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw IoError(path + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  int format = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= b.size()) {
    const unsigned char* id = b.data() + pos;
    const std::uint32_t len = detail::get_u32(b.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw IoError(path + ": truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw IoError(path + ": short fmt chunk");
      format = detail::get_u16(b.data() + body);
      channels = detail::get_u16(b.data() + body + 2);
      rate = detail::get_u32(b.data() + body + 4);
      bits = detail::get_u16(b.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::get_u16(b.data() + body + 24);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = b.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (format < 0 || !data) throw IoError(path + ": missing fmt or data chunk");
  if (channels != 1) throw IoError(path + ": only mono WAV is supported (got " + std::to_string(channels) + " channels)");
  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] = static_cast<std::int16_t>(detail::get_u16(data + 2 * i)) / 32767.0;
  } else if (format == 3 && bits == 32) {
    w.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      const std::uint32_t u = detail::get_u32(data + 4 * i);
      float v;
      std::memcpy(&v, &u, 4);
      w.samples[i] = v;
    }
  } else {
    throw IoError(path + ": unsupported WAV layout (format " + std::to_string(format) + ", " +
                  std::to_string(bits) + " bits); expected PCM16 or float32");
  }
  return w;
}

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

/// Kaiser window evaluated at normalized position u in [-1, 1].
inline double kaiser(double u, double beta) {
  if (std::abs(u) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - u * u)) / std::cyl_bessel_i(0.0, beta);
}

}  // namespace detail

/// Band-limited rational resampling with a Kaiser-windowed sinc kernel. The
/// kernel cutoff sits at 94% of the lower of the two Nyquist frequencies.
inline Waveform resample(const Waveform& wave, int target_rate) {
  MASKGRAM_REQUIRE(wave.sample_rate_hz > 0 && target_rate > 0, "sample rates must be positive");
  if (wave.sample_rate_hz == target_rate) return wave;
  const long g = std::gcd(static_cast<long>(wave.sample_rate_hz), static_cast<long>(target_rate));
  const long up = target_rate / g;
  const long down = wave.sample_rate_hz / g;
  constexpr double kRolloff = 0.94;
  constexpr double kZeroCrossings = 24.0;
  constexpr double kBeta = 8.6;
  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down)) * kRolloff;
  const long half = static_cast<long>(std::ceil(kZeroCrossings / cutoff));
  const long taps = 2 * half;

  auto kernel_for_phase = [&](long phase, std::vector<double>& h) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    h.resize(static_cast<std::size_t>(taps));
    double s = 0.0;
    for (long j = 0; j < taps; ++j) {
      const double tau = static_cast<double>(j - half + 1) - frac;
      h[static_cast<std::size_t>(j)] =
          cutoff * detail::sinc(cutoff * tau) * detail::kaiser(tau / static_cast<double>(half), kBeta);
      s += h[static_cast<std::size_t>(j)];
    }
    for (auto& v : h) v /= s;
  };

  const bool use_table = up <= 4096;
  std::vector<std::vector<double>> table;
  if (use_table) {
    table.resize(static_cast<std::size_t>(up));
    for (long p = 0; p < up; ++p) kernel_for_phase(p, table[static_cast<std::size_t>(p)]);
  }
  const long n_in = static_cast<long>(wave.samples.size());
  const long n_out = static_cast<long>(
      std::ceil(static_cast<double>(n_in) * static_cast<double>(up) / static_cast<double>(down)));
  Waveform out;
  out.sample_rate_hz = target_rate;
  out.samples.assign(static_cast<std::size_t>(n_out), 0.0);
  std::vector<double> scratch;
  for (long n = 0; n < n_out; ++n) {
    const long pos = n * down;
    const long base = pos / up;
    const long phase = pos % up;
    const std::vector<double>* h;
    if (use_table) {
      h = &table[static_cast<std::size_t>(phase)];
    } else {
      kernel_for_phase(phase, scratch);
      h = &scratch;
    }
    double acc = 0.0;
    for (long j = 0; j < taps; ++j) {
      const long idx = base + j - half + 1;
      if (idx < 0 || idx >= n_in) continue;
      acc += (*h)[static_cast<std::size_t>(j)] * wave.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

}  // namespace maskgram
