// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset manifests, artifact metadata, and assembly of training examples
// from clean/distorted pairs.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskgram/audio.hpp"
#include "maskgram/codec.hpp"
#include "maskgram/config.hpp"
#include "maskgram/distortion.hpp"
#include "maskgram/features.hpp"
#include "maskgram/generator.hpp"
#include "maskgram/kmeans.hpp"
#include "maskgram/teacher.hpp"

namespace maskgram {

inline constexpr int kManifestVersion = 1;
inline constexpr std::string_view kManifestFormat = "maskgram-manifest";

struct ManifestRecord {
  std::string id;
  std::string split = "train";  // train | test
  std::uint64_t synth_seed = 0;
  std::string clean_path;  // empty: synthesize from synth_seed
  double duration_s = 1.0;
  DistortionSpec spec;
};

struct Manifest {
  std::string config;  // resolved RunConfig text
  int sample_rate = 16000;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(std::string_view name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }
};

inline std::vector<Stage> parse_stage_list(const std::string& text) {
  std::vector<Stage> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ','))
    if (!item.empty()) out.push_back(parse_stage(item));
  return out;
}

/// Per-record corruption drawn uniformly from the configured ranges.
inline DistortionSpec draw_distortion(const RunConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  DistortionSpec d;
  d.seed = rng.next_u64();
  d.order = parse_stage_list(c.stages);
  d.noise_color = parse_noise_color(c.noise_color);
  for (Stage s : d.order) {
    switch (s) {
      case Stage::kReverb: d.reverb = true; break;
      case Stage::kNoise: d.noise = true; break;
      case Stage::kClip: d.clipping = true; break;
      case Stage::kBandlimit: d.band_limit = true; break;
    }
  }
  d.snr_db = rng.uniform(c.snr_min, c.snr_max);
  d.bandwidth_hz = rng.uniform(c.bandwidth_min, std::min(c.bandwidth_max, c.sample_rate / 2.0));
  d.clip_ratio = rng.uniform(c.clip_min, c.clip_max);
  d.reverb_rt60_s = d.reverb ? rng.uniform(0.1, std::max(0.1, c.rt60_max)) : 0.0;
  return d;
}

/// Synthetic corpus: the last `heldout` records form the test split.
inline Manifest make_manifest(const RunConfig& c) {
  validate(c);
  Manifest m;
  m.config = config_text(c);
  m.sample_rate = c.sample_rate;
  for (int i = 0; i < c.clips; ++i) {
    ManifestRecord r;
    r.id = "clip" + std::to_string(i);
    r.split = i >= c.clips - c.heldout ? "test" : "train";
    r.synth_seed = derive_seed(c.data_seed, 0xc1ea, static_cast<std::uint64_t>(i));
    r.duration_s = c.clip_seconds;
    r.spec = draw_distortion(c, derive_seed(c.data_seed, 0xd157, static_cast<std::uint64_t>(i)));
    m.records.push_back(std::move(r));
  }
  return m;
}

inline nlohmann::json to_json(const DistortionSpec& d) {
  std::vector<std::string> order;
  for (Stage s : d.order) order.emplace_back(to_string(s));
  return {{"snr_db", d.snr_db},         {"bandwidth_hz", d.bandwidth_hz}, {"clip_ratio", d.clip_ratio},
          {"reverb_rt60_s", d.reverb_rt60_s}, {"seed", d.seed},               {"reverb", d.reverb},
          {"noise", d.noise},           {"clipping", d.clipping},         {"band_limit", d.band_limit},
          {"noise_color", std::string(to_string(d.noise_color))}, {"order", order}};
}

inline DistortionSpec distortion_from_json(const nlohmann::json& j) {
  DistortionSpec d;
  d.snr_db = j.at("snr_db").get<double>();
  d.bandwidth_hz = j.at("bandwidth_hz").get<double>();
  d.clip_ratio = j.at("clip_ratio").get<double>();
  d.reverb_rt60_s = j.at("reverb_rt60_s").get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  d.reverb = j.at("reverb").get<bool>();
  d.noise = j.at("noise").get<bool>();
  d.clipping = j.at("clipping").get<bool>();
  d.band_limit = j.at("band_limit").get<bool>();
  d.noise_color = parse_noise_color(j.at("noise_color").get<std::string>());
  d.order.clear();
  for (const auto& s : j.at("order")) d.order.push_back(parse_stage(s.get<std::string>()));
  return d;
}

/// JSON lines: a header object, then one object per record.
inline std::string manifest_to_jsonl(const Manifest& m) {
  std::string out = nlohmann::json{{"format", kManifestFormat},
                                   {"version", kManifestVersion},
                                   {"sample_rate", m.sample_rate},
                                   {"config", m.config}}
                        .dump() +
                    "\n";
  for (const auto& r : m.records) {
    nlohmann::json j{{"id", r.id},           {"split", r.split},           {"synth_seed", r.synth_seed},
                     {"clean", r.clean_path}, {"duration_s", r.duration_s}, {"distortion", to_json(r.spec)}};
    out += j.dump() + "\n";
  }
  return out;
}

inline Manifest parse_manifest(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  Manifest m;
  int lineno = 0;
  try {
    if (!std::getline(in, line)) throw IoError("empty manifest");
    ++lineno;
    const auto head = nlohmann::json::parse(line);
    if (head.value("format", "") != kManifestFormat) throw IoError("not a maskgram manifest");
    const int version = head.at("version").get<int>();
    if (version != kManifestVersion) throw IoError("unsupported manifest version " + std::to_string(version));
    m.sample_rate = head.at("sample_rate").get<int>();
    m.config = head.value("config", "");
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.split = j.at("split").get<std::string>();
      r.synth_seed = j.at("synth_seed").get<std::uint64_t>();
      r.clean_path = j.value("clean", "");
      r.duration_s = j.at("duration_s").get<double>();
      r.spec = distortion_from_json(j.at("distortion"));
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest line " + std::to_string(lineno) + ": " + e.what());
  }
  return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << manifest_to_jsonl(m);
  if (!f) throw IoError("failed writing " + path);
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return parse_manifest(s.str());
}

struct RealizedPair {
  Waveform clean;
  Waveform distorted;
};

/// Clean signal (read or synthesized) and its corruption. A relative clean
/// path is resolved against `base_dir`.
inline RealizedPair realize(const ManifestRecord& r, int sample_rate, const std::string& base_dir = "") {
  RealizedPair p;
  if (r.clean_path.empty()) {
    p.clean = synth_clean(r.synth_seed, r.duration_s, sample_rate);
  } else {
    const std::string path = (base_dir.empty() || r.clean_path.front() == '/') ? r.clean_path
                                                                                 : base_dir + "/" + r.clean_path;
    p.clean = read_wav(path);
    if (p.clean.sample_rate_hz != sample_rate) p.clean = resample(p.clean, sample_rate);
  }
  p.distorted = apply_distortion(p.clean, Waveform{{}, sample_rate}, r.spec);
  return p;
}

// ---- artifact metadata -----------------------------------------------------

inline constexpr int kArtifactVersion = 1;

/// Every artifact carries its kind, a format version, and the resolved config.
inline void stamp_artifact(Checkpoint& ck, std::string_view kind, const RunConfig& cfg) {
  ck.put_text("meta/kind", kind);
  ck.put_text("meta/version", std::to_string(kArtifactVersion));
  ck.put_text("meta/config", config_text(cfg));
}

inline void expect_artifact(const Checkpoint& ck, std::string_view kind, const std::string& path) {
  if (!ck.contains("meta/kind") || ck.text("meta/kind") != kind)
    throw IoError(path + " is not a " + std::string(kind) + " artifact");
  if (ck.text("meta/version") != std::to_string(kArtifactVersion))
    throw IoError(path + " has unsupported artifact version " + ck.text("meta/version"));
}

// ---- dataset assembly ------------------------------------------------------

inline AudioConfig audio_config(const RunConfig& c) {
  AudioConfig a;
  a.sample_rate = c.sample_rate;
  a.n_fft = c.n_fft;
  a.hop = c.hop;
  return a;
}

inline FeatureSequence features_of(const Waveform& w, const AudioConfig& a) {
  return stft_compressed(w, static_cast<std::size_t>(a.n_fft), static_cast<std::size_t>(a.hop), a.exponent);
}

/// Splits a waveform into full windows of `seconds`; a clip shorter than one
/// window is kept whole.
inline std::vector<Waveform> split_windows(const Waveform& w, double seconds) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * w.sample_rate_hz));
  if (n == 0 || w.size() <= n) return {w};
  std::vector<Waveform> out;
  for (std::size_t s = 0; s + n <= w.size(); s += n)
    out.push_back({std::vector<double>(w.samples.begin() + static_cast<std::ptrdiff_t>(s),
                                       w.samples.begin() + static_cast<std::ptrdiff_t>(s + n)),
                   w.sample_rate_hz});
  return out;
}

/// Stacks the compressed-STFT frames of many clips into one N x C matrix.
inline Tensor<double> stack_frames(const std::vector<Waveform>& clips, const AudioConfig& a) {
  std::vector<Tensor<double>> parts;
  std::size_t rows = 0;
  for (const auto& w : clips) {
    parts.push_back(features_of(w, a).frames);
    rows += parts.back().rows();
  }
  MASKGRAM_REQUIRE(!parts.empty(), "no clips to stack");
  Tensor<double> out = Tensor<double>::matrix(rows, parts[0].cols());
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * out.cols()));
    r += p.rows();
  }
  return out;
}

inline Waveform to_teacher_rate(const Waveform& w, const TeacherParams& t) {
  return w.sample_rate_hz == t.sample_rate_hz ? w : resample(w, t.sample_rate_hz);
}

/// Teacher built from the config; deterministic in the teacher seed.
inline TeacherParams make_teacher(const RunConfig& c) {
  return TeacherParams::create(c.teacher_seed, c.teacher_layers, c.teacher_dim);
}

/// KD target of one clean window for `variant`.
inline TeacherTarget kd_target_for(const Waveform& clean, KdVariant variant, const TeacherParams& teacher,
                                   const KMeansCodebook* codebook, const AudioConfig& a, int layer) {
  if (is_spectral(variant)) {
    auto f = features_of(clean, a);
    if (variant == KdVariant::kStftLow) f = low_band_target(f);
    return select_kd_target({}, variant, nullptr, &f, layer);
  }
  return select_kd_target(teacher_layers(to_teacher_rate(clean, teacher), teacher), variant, codebook, nullptr,
                          layer);
}

/// Width of the KD head for a variant: teacher dim, K_t logits, or STFT bins.
inline int kd_width(KdVariant v, const RunConfig& c) {
  const int bins = c.n_fft / 2 + 1;
  switch (v) {
    case KdVariant::kNone: return 0;
    case KdVariant::kL9K500: return c.K_t;
    case KdVariant::kL9Feature:
    case KdVariant::kAvgFeature: return c.teacher_dim;
    case KdVariant::kStftFull: return bins;
    case KdVariant::kStftLow: return static_cast<int>(low_band_bins(static_cast<std::size_t>(bins)));
  }
  return 0;
}

inline ModelConfig model_config(const RunConfig& c, KdVariant kd) {
  ModelConfig m;
  m.d = c.d;
  m.n_heads = c.n_heads;
  m.n_blocks_encoder = c.n_blocks_encoder;
  m.n_blocks_generator = c.n_blocks_generator;
  m.mlp_mult = c.mlp_mult;
  m.vocab_K = c.K;
  m.num_codebooks_Q = c.Q;
  m.max_T = c.max_T;
  m.input_channels = c.n_fft / 2 + 1;
  m.kd_dim = kd_width(kd, c);
  return m;
}

/// Training examples from clean/distorted pairs: distorted features in,
/// clean codegram and teacher target out.
inline std::vector<TrainingExample> build_examples(const std::vector<RealizedPair>& pairs, const CodecParams& codec,
                                                   KdVariant kd, const TeacherParams& teacher,
                                                   const KMeansCodebook* codebook, const RunConfig& c) {
  const auto a = audio_config(c);
  std::vector<TrainingExample> out;
  for (const auto& p : pairs) {
    const auto cw = split_windows(p.clean, c.window_seconds_train);
    const auto dw = split_windows(p.distorted, c.window_seconds_train);
    for (std::size_t i = 0; i < cw.size(); ++i) {
      TrainingExample ex;
      ex.features = features_of(dw[i], a).frames;
      ex.target = rvq_encode(features_of(cw[i], a).frames, codec);
      if (kd != KdVariant::kNone) ex.kd_target = kd_target_for(cw[i], kd, teacher, codebook, a, c.teacher_layer);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace maskgram
