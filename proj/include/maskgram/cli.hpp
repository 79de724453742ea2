// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Logs go to the log stream (stderr in the binary);
// results go to files.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <list>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "maskgram/data.hpp"
#include "maskgram/gradcheck.hpp"
#include "maskgram/sampler.hpp"
#include "maskgram/selftest.hpp"

namespace maskgram {

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitIo = 2;

/// Worker threads: hardware concurrency, capped by MASKGRAM_THREADS.
inline int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("MASKGRAM_THREADS"); env && *env) {
    int cap = 0;
    const std::string s(env);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || cap < 1)
      throw ConfigError("MASKGRAM_THREADS must be a positive integer, got '" + s + "'");
    n = std::min(n, cap);
  }
  return n;
}

inline DecodeConfig decode_config(const RunConfig& c) {
  DecodeConfig d;
  d.iterations = c.iterations;
  d.guidance = c.guidance;
  d.seed = c.decode_seed;
  d.span_length = c.span_length;
  d.window_seconds = c.window_seconds;
  d.noise_v0 = c.noise_v0;
  d.griffin_lim_iters = c.griffin_lim_iters;
  return d;
}

namespace cli {

struct Common {
  std::string preset = "toy";
  std::string config_file;
  std::vector<std::string> sets;
  bool verbose = false;
  // Dedicated flags; each maps onto one config key.
  std::list<std::pair<std::string, std::optional<std::string>>> flags;  // stable addresses
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--preset", c.preset, "Defaults to start from: toy or paper");
  sub->add_option("--config", c.config_file, "Sectioned key=value config file");
  sub->add_option("--set", c.sets, "Override one key: section.key=value (repeatable)");
  sub->add_flag("-v,--verbose", c.verbose, "Per-step and per-window telemetry");
}

inline std::optional<std::string>& add_key_flag(CLI::App* sub, Common& c, const std::string& flag,
                                                const std::string& key, const std::string& help) {
  c.flags.emplace_back(key, std::nullopt);
  auto& slot = c.flags.back().second;
  sub->add_option_function<std::string>(flag, [&slot](const std::string& v) { slot = v; }, help);
  return slot;
}

/// preset <- file <- --set <- dedicated flags.
inline RunConfig resolve(const Common& c) {
  RunConfig cfg = RunConfig::from_preset(c.preset);
  if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : c.flags)
    if (value) set_config_value(cfg, key, *value);
  validate(cfg);
  return cfg;
}

inline std::string manifest_path(const RunConfig& cfg, const std::string& flag) {
  return flag.empty() ? cfg.data_dir + "/manifest.jsonl" : flag;
}

inline Manifest load_checked_manifest(const std::string& path, const RunConfig& cfg) {
  auto m = load_manifest(path);
  if (m.sample_rate != cfg.sample_rate)
    throw ConfigError("manifest " + path + " is at " + std::to_string(m.sample_rate) + " Hz but the config uses " +
                      std::to_string(cfg.sample_rate) + " Hz");
  return m;
}

inline std::vector<RealizedPair> realize_split(const Manifest& m, const std::string& split, const RunConfig& cfg,
                                               const std::string& base_dir) {
  std::vector<RealizedPair> out;
  for (const auto* r : m.split(split)) out.push_back(realize(*r, cfg.sample_rate, base_dir));
  if (out.empty()) throw ContractError("manifest has no '" + split + "' records");
  return out;
}

inline CodecParams load_checked_codec(const RunConfig& cfg) {
  const auto ck = Checkpoint::load(cfg.codec_path);
  expect_artifact(ck, "codec", cfg.codec_path);
  auto codec = load_codec(ck);
  if (codec.channels != cfg.n_fft / 2 + 1)
    throw ConfigError("codec " + cfg.codec_path + " has " + std::to_string(codec.channels) +
                      " channels but n_fft gives " + std::to_string(cfg.n_fft / 2 + 1));
  if (codec.Q != cfg.Q || codec.K != cfg.K)
    throw ConfigError("codec " + cfg.codec_path + " is Q=" + std::to_string(codec.Q) + " K=" +
                      std::to_string(codec.K) + " but the config asks for Q=" + std::to_string(cfg.Q) +
                      " K=" + std::to_string(cfg.K));
  return codec;
}

inline KMeansCodebook load_checked_codebook(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.teacher_path))
    throw ConfigError("KD variant l9-k500 needs a k-means codebook at " + cfg.teacher_path +
                      "; run `maskgram train-teacher` first");
  const auto ck = Checkpoint::load(cfg.teacher_path);
  expect_artifact(ck, "teacher-codebook", cfg.teacher_path);
  auto cb = load_kmeans(ck);
  if (static_cast<int>(cb.size()) != cfg.K_t || static_cast<int>(cb.centroids.cols()) != cfg.teacher_dim)
    throw ConfigError("codebook " + cfg.teacher_path + " does not match K_t / teacher dim of the config");
  return cb;
}

inline MaskModel<float> load_checked_model(const RunConfig& cfg) {
  const auto ck = Checkpoint::load(cfg.model_path);
  expect_artifact(ck, "model", cfg.model_path);
  auto m = load_model<float>(ck);
  if (m.cfg.input_channels != cfg.n_fft / 2 + 1)
    throw ConfigError("model " + cfg.model_path + " expects " + std::to_string(m.cfg.input_channels) +
                      " input channels; n_fft gives " + std::to_string(cfg.n_fft / 2 + 1));
  return m;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands -----------------------------------------------------------

inline int synth_data(const RunConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.data_dir);
  std::error_code ec;
  fs::create_directories(dir / "clean", ec);
  fs::create_directories(dir / "distorted", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto m = make_manifest(cfg);
  for (const auto& r : m.records) {
    const auto p = realize(r, cfg.sample_rate);
    write_wav((dir / "clean" / (r.id + ".wav")).string(), p.clean);
    write_wav((dir / "distorted" / (r.id + ".wav")).string(), p.distorted);
  }
  save_manifest((dir / "manifest.jsonl").string(), m);
  log << "synth-data: " << m.records.size() << " clips (" << m.split("test").size() << " test) in " << dir.string()
      << "\n";
  return kExitOk;
}

inline int train_codec(const RunConfig& cfg, const std::string& manifest, std::ostream& log) {
  const auto path = manifest_path(cfg, manifest);
  const auto m = load_checked_manifest(path, cfg);
  std::vector<Waveform> clean;
  for (const auto& p : realize_split(m, "train", cfg, std::filesystem::path(path).parent_path().string()))
    for (auto& w : split_windows(p.clean, cfg.window_seconds_train)) clean.push_back(std::move(w));
  const auto frames = stack_frames(clean, audio_config(cfg));
  const auto codec = rvq_train(frames, cfg.Q, cfg.K, cfg.codec_seed, cfg.code_dim, 1e-6, cfg.codec_kmeans_iters);
  Checkpoint ck;
  stamp_artifact(ck, "codec", cfg);
  save_codec(ck, codec);
  ck.save(cfg.codec_path);
  log << "train-codec: " << frames.rows() << " frames, stage MSE";
  for (double v : codec.train_mse) log << " " << v;
  log << " -> " << cfg.codec_path << "\n";
  return kExitOk;
}

inline int train_teacher(const RunConfig& cfg, const std::string& manifest, std::ostream& log) {
  const auto path = manifest_path(cfg, manifest);
  const auto m = load_checked_manifest(path, cfg);
  const auto teacher = make_teacher(cfg);
  std::vector<Tensor<double>> parts;
  std::size_t rows = 0;
  for (const auto& p : realize_split(m, "train", cfg, std::filesystem::path(path).parent_path().string())) {
    const auto layers = teacher_layers(to_teacher_rate(p.clean, teacher), teacher);
    parts.push_back(layers[static_cast<std::size_t>(cfg.teacher_layer - 1)].frames);
    rows += parts.back().rows();
  }
  Tensor<double> frames = Tensor<double>::matrix(rows, static_cast<std::size_t>(cfg.teacher_dim));
  std::size_t r = 0;
  for (const auto& part : parts) {
    std::copy(part.data.begin(), part.data.end(), frames.data.begin() + static_cast<std::ptrdiff_t>(r * frames.cols()));
    r += part.rows();
  }
  const auto cb = kmeans_fit(frames, static_cast<std::size_t>(cfg.K_t), cfg.teacher_kmeans_iters, cfg.teacher_seed);
  Checkpoint ck;
  stamp_artifact(ck, "teacher-codebook", cfg);
  save_kmeans(ck, cb);
  ck.save(cfg.teacher_path);
  log << "train-teacher: " << rows << " frames, K_t=" << cfg.K_t << ", " << cb.iterations
      << " iterations, inertia " << cb.inertia << " -> " << cfg.teacher_path << "\n";
  return kExitOk;
}

inline int train(const RunConfig& cfg, const std::string& manifest, bool verbose, std::ostream& log) {
  const KdVariant kd = parse_kd_variant(cfg.kd);
  std::optional<KMeansCodebook> codebook;
  if (kd == KdVariant::kL9K500) codebook = load_checked_codebook(cfg);
  const auto codec = load_checked_codec(cfg);
  const auto path = manifest_path(cfg, manifest);
  const auto m = load_checked_manifest(path, cfg);
  const auto pairs = realize_split(m, "train", cfg, std::filesystem::path(path).parent_path().string());
  const auto data =
      build_examples(pairs, codec, kd, make_teacher(cfg), codebook ? &*codebook : nullptr, cfg);

  auto model = init_model<float>(model_config(cfg, kd), kd, cfg.model_seed, cfg.bn_momentum);
  apply_embedding_init(model, export_embedding_init(codec, cfg.d, derive_seed(cfg.model_seed, 0xe4b)));
  TrainOptions opt;
  opt.steps = cfg.steps;
  opt.batch = cfg.batch;
  opt.adam.lr = cfg.lr;
  opt.cond_drop = cfg.cond_drop;
  opt.span_length = cfg.span_length;
  opt.seed = cfg.train_seed;
  opt.threads = worker_threads();
  Trainer<float> trainer(model, data, opt);
  const auto t0 = std::chrono::steady_clock::now();
  log << "step\ttotal\tce\tkd\tlr\n";
  trainer.run([&](const StepLog& s) {
    if (verbose || s.step % 50 == 0 || s.step + 1 == opt.steps)
      log << s.step << '\t' << s.total << '\t' << s.ce << '\t' << s.kd << '\t' << s.lr << '\n';
  });
  Checkpoint ck;
  stamp_artifact(ck, "model", cfg);
  save_model(ck, model);
  ck.save(cfg.model_path);
  log << "train: kd=" << to_string(kd) << ", " << data.size() << " windows, " << opt.steps << " steps in "
      << std::fixed << std::setprecision(1) << seconds_since(t0) << " s -> " << cfg.model_path << "\n";
  return kExitOk;
}

inline int restore(const RunConfig& cfg, const std::string& in, const std::string& out, bool verbose,
                   std::ostream& log) {
  if (in.empty() || out.empty()) throw ConfigError("restore needs --in and --out");
  const auto model = load_checked_model(cfg);
  const auto codec = load_checked_codec(cfg);
  const auto wave = read_wav(in);
  RestoreTelemetry tel;
  const auto y = restore_waveform(wave, model, codec, audio_config(cfg), decode_config(cfg), &tel);
  write_wav(out, y);
  if (verbose)
    for (std::size_t w = 0; w < tel.windows.size(); ++w) {
      log << "window " << w << " masked:";
      for (auto n : tel.windows[w].masked_after) log << ' ' << n;
      log << '\n';
    }
  log << "restore: " << in << " -> " << out << " (" << tel.windows.size() << " windows, w=" << cfg.guidance
      << ", N=" << cfg.iterations << (tel.resampled ? ", resampled" : "") << ")\n";
  return kExitOk;
}

inline int eval(const RunConfig& cfg, const std::string& manifest, const std::string& split, const std::string& out,
                std::ostream& log) {
  const auto model = load_checked_model(cfg);
  const auto codec = load_checked_codec(cfg);
  std::optional<KMeansCodebook> codebook;
  if (model.kd == KdVariant::kL9K500) codebook = load_checked_codebook(cfg);
  const auto path = manifest_path(cfg, manifest);
  const auto m = load_checked_manifest(path, cfg);
  const auto pairs = realize_split(m, split, cfg, std::filesystem::path(path).parent_path().string());
  const auto audio = audio_config(cfg);
  const auto teacher = make_teacher(cfg);
  const auto dcfg = decode_config(cfg);

  std::ostringstream rows;
  rows << "clip\tlsd_distorted\tlsd_restored\tmasked_accuracy\tkd_error\n";
  double sum_d = 0, sum_r = 0, sum_acc = 0, sum_kd = 0;
  const auto ids = m.split(split);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const double ld = lsd(p.clean, p.distorted);
    const double lr = lsd(p.clean, restore_waveform(p.distorted, model, codec, audio, dcfg));
    // Masked-token accuracy: half the clean codegram hidden, argmax of the
    // conditional logits at the hidden positions.
    const auto feats = features_of(p.distorted, audio).frames;
    const auto target = rvq_encode(features_of(p.clean, audio).frames, codec);
    const auto plan = token_mask(target.Q, target.T, 0.5, derive_seed(cfg.decode_seed, 0xacc, i));
    const auto cond = encode_speech(model, feats, Mode::kEval).condition;
    const auto logits = generator_logits(model, apply_mask(target, plan), cond);
    std::size_t hit = 0, total = 0;
    for (std::size_t pos = 0; pos < plan.grid.size(); ++pos) {
      if (!plan.grid[pos]) continue;
      const auto* row = logits.data.data() + pos * static_cast<std::size_t>(target.K);
      const auto best = static_cast<int>(std::max_element(row, row + target.K) - row);
      hit += best == target.tokens[pos];
      ++total;
    }
    const double acc = static_cast<double>(hit) / static_cast<double>(total);
    double kd_err = std::nan("");
    if (model.has_kd_head()) {
      const auto tt = kd_target_for(p.clean, model.kd, teacher, codebook ? &*codebook : nullptr, audio,
                                    cfg.teacher_layer);
      kd_err = kd_loss(kd_probe(model, feats, tt.frames()), tt);
      sum_kd += kd_err;
    }
    sum_d += ld;
    sum_r += lr;
    sum_acc += acc;
    rows << ids[i]->id << '\t' << ld << '\t' << lr << '\t' << acc << '\t' << kd_err << '\n';
  }
  const double n = static_cast<double>(pairs.size());
  rows << "mean\t" << sum_d / n << '\t' << sum_r / n << '\t' << sum_acc / n << '\t'
       << (model.has_kd_head() ? sum_kd / n : std::nan("")) << '\n';
  std::ofstream f(out);
  if (!f) throw IoError("cannot open " + out + " for writing");
  f << rows.str();
  log << "eval: " << pairs.size() << " clips, LSD distorted " << sum_d / n << ", restored " << sum_r / n
      << ", masked accuracy " << sum_acc / n;
  if (model.has_kd_head()) log << ", KD error " << sum_kd / n;
  log << " -> " << out << "\n";
  return kExitOk;
}

inline int gradcheck_cmd(bool verbose, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = gradcheck_suite();
  for (const auto& e : r.entries)
    if (verbose || e.max_rel_error >= 1e-3) log << e.name << '\t' << e.size << '\t' << e.max_rel_error << '\n';
  log << "gradcheck: " << r.checked << " scalars, max relative error " << r.max_rel_error << ", "
      << (r.passed() ? "PASS" : "FAIL") << " in " << seconds_since(t0) << " s\n";
  return r.passed() ? kExitOk : kExitContract;
}

inline int selftest(std::ostream& log) {
  bool all = true;
  for (const auto& suite : selftest_suites()) {
    const auto r = suite();
    all = all && r.passed;
    log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
  }
  return all ? kExitOk : kExitContract;
}

}  // namespace cli

/// Runs one subcommand. `args` excludes the program name.
inline int run_command(const std::vector<std::string>& args, std::ostream& log = std::cerr,
                       std::ostream& out = std::cout) {
  CLI::App app{"maskgram: masked codegram speech restoration at toy scale"};
  app.require_subcommand(1);
  cli::Common common;
  std::string manifest, in, out_path, split = "test", eval_out = "eval.tsv";

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic manifest and WAVs");
  auto* codec = app.add_subcommand("train-codec", "Fit the residual vector quantizer");
  auto* teacher = app.add_subcommand("train-teacher", "Fit the k-means codebook on teacher features");
  auto* train = app.add_subcommand("train", "Train the joint encoder/generator model");
  auto* restore = app.add_subcommand("restore", "Restore one WAV file");
  auto* eval = app.add_subcommand("eval", "LSD, masked-token accuracy and KD error on a manifest split");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  auto* self = app.add_subcommand("selftest", "Invariant suites");
  for (auto* s : {synth, codec, teacher, train, restore, eval, grad, self}) cli::add_common(s, common);

  cli::add_key_flag(synth, common, "--out-dir", "paths.data_dir", "Dataset directory");
  for (auto* s : {codec, teacher, train, eval}) s->add_option("--manifest", manifest, "Manifest (default <data_dir>/manifest.jsonl)");
  cli::add_key_flag(codec, common, "--out", "paths.codec", "Codec output path");
  cli::add_key_flag(teacher, common, "--out", "paths.teacher", "Codebook output path");
  cli::add_key_flag(train, common, "--kd", "train.kd",
                    "KD target: none, l9-k500, l9-feature, avg-feature, stft-full, stft-low");
  cli::add_key_flag(train, common, "--span-length", "train.span_length", "Span length L (0 = token masking)");
  cli::add_key_flag(train, common, "--steps", "train.steps", "Training steps");
  cli::add_key_flag(train, common, "--out", "paths.model", "Model output path");
  for (auto* s : {train, restore, eval}) cli::add_key_flag(s, common, "--codec", "paths.codec", "Codec path");
  for (auto* s : {restore, eval}) cli::add_key_flag(s, common, "--model", "paths.model", "Model path");
  restore->add_option("--in", in, "Distorted input WAV")->required();
  restore->add_option("--out", out_path, "Restored output WAV")->required();
  cli::add_key_flag(restore, common, "--guidance", "decode.guidance", "Guidance level w >= 0");
  cli::add_key_flag(restore, common, "--iterations", "decode.iterations", "Decoding iterations N");
  cli::add_key_flag(restore, common, "--span-length", "train.span_length", "Span-level scoring length (0 = token)");
  eval->add_option("--split", split, "Manifest split to evaluate");
  eval->add_option("--out", eval_out, "Per-clip TSV report");

  std::vector<std::string> argv_store{"maskgram"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    log << sub->help();
    return kExitContract;
  }

  try {
    if (*grad) return cli::gradcheck_cmd(common.verbose, log);
    if (*self) return cli::selftest(log);
    const RunConfig cfg = cli::resolve(common);
    if (*synth) return cli::synth_data(cfg, log);
    if (*codec) return cli::train_codec(cfg, manifest, log);
    if (*teacher) return cli::train_teacher(cfg, manifest, log);
    if (*train) return cli::train(cfg, manifest, common.verbose, log);
    if (*restore) return cli::restore(cfg, in, out_path, common.verbose, log);
    if (*eval) return cli::eval(cfg, manifest, split, eval_out, log);
  } catch (const IoError& e) {
    log << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitContract;
  }
  return kExitContract;
}

}  // namespace maskgram
