// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: presets, sectioned key=value files, and flag overrides.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "maskgram/error.hpp"

namespace maskgram {

struct RunConfig {
  std::string preset = "toy";

  // [audio]
  int sample_rate = 16000;
  int n_fft = 512;
  int hop = 256;

  // [model]
  int d = 64;
  int n_heads = 4;
  int n_blocks_encoder = 2;
  int n_blocks_generator = 2;
  int mlp_mult = 4;
  int max_T = 1024;
  std::uint64_t model_seed = 1;

  // [codec]
  int Q = 4;
  int K = 64;
  int code_dim = 8;
  int codec_kmeans_iters = 50;
  std::uint64_t codec_seed = 2;

  // [teacher]
  int K_t = 50;
  int teacher_dim = 32;
  int teacher_layers = 12;
  int teacher_layer = 9;
  int teacher_kmeans_iters = 50;
  std::uint64_t teacher_seed = 3;

  // [train]
  std::string kd = "avg-feature";
  int span_length = 0;
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  double cond_drop = 0.1;
  double bn_momentum = 0.01;
  double window_seconds_train = 1.0;
  std::uint64_t train_seed = 4;

  // [decode]
  double guidance = 1.0;
  int iterations = 20;
  double noise_v0 = 4.0;
  double window_seconds = 4.0;
  int griffin_lim_iters = 32;
  std::uint64_t decode_seed = 5;

  // [data]
  int clips = 200;
  int heldout = 20;
  double clip_seconds = 1.0;
  double snr_min = -5.0;
  double snr_max = 20.0;
  double bandwidth_min = 1000.0;
  double bandwidth_max = 8000.0;
  double clip_min = 0.1;
  double clip_max = 0.5;
  double rt60_max = 0.3;
  std::string stages = "reverb,noise,clip,bandlimit";
  std::string noise_color = "pink";
  std::uint64_t data_seed = 6;

  // [paths]
  std::string data_dir = "data";
  std::string codec_path = "codec.mskg";
  std::string teacher_path = "teacher.mskg";
  std::string model_path = "model.mskg";

  static RunConfig toy() { return RunConfig{}; }

  static RunConfig paper() {
    RunConfig c;
    c.preset = "paper";
    c.sample_rate = 44100;
    c.n_fft = 2048;
    c.hop = 512;
    c.d = 512;
    c.n_heads = 16;
    c.n_blocks_encoder = 6;
    c.n_blocks_generator = 8;
    c.max_T = 4096;
    c.Q = 9;
    c.K = 1024;
    c.K_t = 500;
    c.teacher_dim = 768;
    c.kd = "l9-k500";
    c.steps = 800000;
    c.batch = 128;
    c.lr = 1e-4;
    c.window_seconds_train = 4.0;
    c.bandwidth_max = 22050.0;
    c.clip_seconds = 4.0;
    return c;
  }

  static RunConfig from_preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
  }
};

namespace detail {

using FieldPtr = std::variant<int*, double*, std::uint64_t*, std::string*>;

struct Field {
  std::string section;
  std::string key;
  FieldPtr ptr;
};

inline std::vector<Field> fields(RunConfig& c) {
  return {
      {"audio", "sample_rate", &c.sample_rate},
      {"audio", "n_fft", &c.n_fft},
      {"audio", "hop", &c.hop},
      {"model", "d", &c.d},
      {"model", "n_heads", &c.n_heads},
      {"model", "n_blocks_encoder", &c.n_blocks_encoder},
      {"model", "n_blocks_generator", &c.n_blocks_generator},
      {"model", "mlp_mult", &c.mlp_mult},
      {"model", "max_T", &c.max_T},
      {"model", "seed", &c.model_seed},
      {"codec", "Q", &c.Q},
      {"codec", "K", &c.K},
      {"codec", "code_dim", &c.code_dim},
      {"codec", "kmeans_iters", &c.codec_kmeans_iters},
      {"codec", "seed", &c.codec_seed},
      {"teacher", "K_t", &c.K_t},
      {"teacher", "dim", &c.teacher_dim},
      {"teacher", "layers", &c.teacher_layers},
      {"teacher", "layer", &c.teacher_layer},
      {"teacher", "kmeans_iters", &c.teacher_kmeans_iters},
      {"teacher", "seed", &c.teacher_seed},
      {"train", "kd", &c.kd},
      {"train", "span_length", &c.span_length},
      {"train", "steps", &c.steps},
      {"train", "batch", &c.batch},
      {"train", "lr", &c.lr},
      {"train", "cond_drop", &c.cond_drop},
      {"train", "bn_momentum", &c.bn_momentum},
      {"train", "window_seconds", &c.window_seconds_train},
      {"train", "seed", &c.train_seed},
      {"decode", "guidance", &c.guidance},
      {"decode", "iterations", &c.iterations},
      {"decode", "noise_v0", &c.noise_v0},
      {"decode", "window_seconds", &c.window_seconds},
      {"decode", "griffin_lim_iters", &c.griffin_lim_iters},
      {"decode", "seed", &c.decode_seed},
      {"data", "clips", &c.clips},
      {"data", "heldout", &c.heldout},
      {"data", "clip_seconds", &c.clip_seconds},
      {"data", "snr_min", &c.snr_min},
      {"data", "snr_max", &c.snr_max},
      {"data", "bandwidth_min", &c.bandwidth_min},
      {"data", "bandwidth_max", &c.bandwidth_max},
      {"data", "clip_min", &c.clip_min},
      {"data", "clip_max", &c.clip_max},
      {"data", "rt60_max", &c.rt60_max},
      {"data", "stages", &c.stages},
      {"data", "noise_color", &c.noise_color},
      {"data", "seed", &c.data_seed},
      {"paths", "data_dir", &c.data_dir},
      {"paths", "codec", &c.codec_path},
      {"paths", "teacher", &c.teacher_path},
      {"paths", "model", &c.model_path},
  };
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("invalid value '" + text + "' for key " + key);
  return v;
}

inline void assign(const Field& f, const std::string& full_key, const std::string& text) {
  std::visit(
      [&](auto* p) {
        using V = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<V, std::string>)
          *p = text;
        else
          *p = parse_number<V>(full_key, text);
      },
      f.ptr);
}

inline std::string render(const FieldPtr& p) {
  return std::visit(
      [](auto* v) -> std::string {
        using V = std::remove_pointer_t<decltype(v)>;
        if constexpr (std::is_same_v<V, std::string>) {
          return *v;
        } else if constexpr (std::is_same_v<V, double>) {
          // Shortest round-trip form.
          char buf[64];
          const auto r = std::to_chars(buf, buf + sizeof buf, *v);
          return std::string(buf, r.ptr);
        } else {
          return std::to_string(*v);
        }
      },
      p);
}

}  // namespace detail

/// Sets `section.key` (or a bare key when it is unambiguous) from text.
/// Unknown or ambiguous keys are configuration errors naming the key.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "preset") throw ConfigError("key 'preset' selects defaults and cannot be overridden here");
  auto all = detail::fields(c);
  const auto dot = key.find('.');
  const detail::Field* hit = nullptr;
  for (const auto& f : all) {
    const bool match = dot == std::string::npos ? f.key == key : (f.section + "." + f.key) == key;
    if (!match) continue;
    if (hit) throw ConfigError("ambiguous key '" + key + "'; qualify it as section.key");
    hit = &f;
  }
  if (!hit) throw ConfigError("unknown config key '" + key + "'");
  detail::assign(*hit, key, value);
}

/// Applies a sectioned key=value text on top of `c`. Lines starting with #
/// or ; are comments. A `preset = ...` line before any section resets to
/// that preset first.
inline void apply_config_text(RunConfig& c, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, section;
  std::map<std::string, int> seen;
  int lineno = 0;
  bool any_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("malformed section header on line " + std::to_string(lineno));
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value on line " + std::to_string(lineno));
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (section.empty() && key == "preset") {
      if (any_key) throw ConfigError("preset must come before other keys");
      c = RunConfig::from_preset(value);
      continue;
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (seen[full]++ > 0) throw ConfigError("conflicting duplicate key '" + full + "'");
    set_config_value(c, full, value);
    any_key = true;
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::ostringstream s;
  s << f.rdbuf();
  apply_config_text(c, s.str());
}

/// Full resolved configuration in the same format apply_config_text reads.
inline std::string config_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::ostringstream out;
  out << "preset = " << c.preset << "\n";
  std::string section;
  for (const auto& f : detail::fields(c)) {
    if (f.section != section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << detail::render(f.ptr) << "\n";
  }
  return out.str();
}

/// Rejects values no module can use.
inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(c.sample_rate > 0, "sample_rate must be positive");
  need(c.n_fft >= 2 && c.n_fft % 2 == 0 && c.hop >= 1 && c.hop <= c.n_fft, "need even n_fft >= hop >= 1");
  need(c.d > 0 && c.n_heads > 0 && c.d % c.n_heads == 0, "d must be a positive multiple of n_heads");
  need(c.Q >= 1 && c.K >= 1 && c.code_dim >= 1, "codec Q, K and code_dim must be positive");
  need(c.K_t >= 1 && c.teacher_dim >= 1 && c.teacher_layers >= 1, "teacher sizes must be positive");
  need(c.teacher_layer >= 1 && c.teacher_layer <= c.teacher_layers, "teacher layer out of range");
  need(c.span_length >= 0, "span_length must be >= 0");
  need(c.steps >= 0 && c.batch >= 1, "steps >= 0 and batch >= 1 required");
  need(c.lr >= 0 && c.cond_drop >= 0 && c.cond_drop <= 1, "lr >= 0 and cond_drop in [0, 1] required");
  need(c.guidance >= 0 && c.iterations >= 1, "guidance >= 0 and iterations >= 1 required");
  need(c.clips >= 1 && c.heldout >= 0 && c.heldout < c.clips, "need clips >= 1 and 0 <= heldout < clips");
  need(c.clip_seconds > 0 && c.window_seconds > 0 && c.window_seconds_train > 0, "durations must be positive");
  need(c.snr_min <= c.snr_max && c.bandwidth_min <= c.bandwidth_max && c.clip_min <= c.clip_max,
       "range minimum exceeds maximum");
}

}  // namespace maskgram
