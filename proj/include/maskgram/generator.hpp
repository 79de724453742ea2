// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// The joint model: speech encoder over distorted compressed-STFT frames, KD
// head, codegram embeddings, generator stack and per-codebook output heads,
// plus the joint loss and its trainer.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "maskgram/adam.hpp"
#include "maskgram/autograd.hpp"
#include "maskgram/checkpoint.hpp"
#include "maskgram/codec.hpp"
#include "maskgram/features.hpp"
#include "maskgram/instrumentation.hpp"
#include "maskgram/masking.hpp"
#include "maskgram/nn.hpp"
#include "maskgram/teacher.hpp"

namespace maskgram {

/// Encoder output, or the learned null embedding when `null` is set.
struct ConditionState {
  bool null = false;
  Tensor<double> features;  // T x d

  static ConditionState null_condition() { return {true, {}}; }
};

template <class T>
struct MaskModel {
  ModelConfig cfg;
  KdVariant kd = KdVariant::kNone;
  ParamSet<T> params;
  NormStats bn;

  bool has_kd_head() const { return kd != KdVariant::kNone; }
};

inline std::string emb_name(int q) { return "gen/emb" + std::to_string(q); }

/// Fresh parameters: N(0, 0.02) projections and embeddings, zero biases, unit
/// gains, identity running statistics.
template <class T>
MaskModel<T> init_model(const ModelConfig& cfg, KdVariant kd, std::uint64_t seed, double bn_momentum = 0.01) {
  cfg.validate();
  if (kd != KdVariant::kNone && cfg.kd_dim <= 0)
    throw ConfigError("KD variant " + std::string(to_string(kd)) + " needs a positive kd_dim");
  MaskModel<T> m;
  m.cfg = cfg;
  m.kd = kd;
  Rng rng(derive_seed(seed, 0x30de1));
  const auto d = static_cast<std::size_t>(cfg.d);
  const auto c = static_cast<std::size_t>(cfg.input_channels);
  const auto mlp = static_cast<std::size_t>(cfg.mlp_mult);
  auto& p = m.params;
  detail::add_norm(p, "enc/bn", c);
  detail::add_linear(p, "enc/in", c, d, rng);
  add_transformer_params(p, "enc", cfg.n_blocks_encoder, d, mlp, rng);
  if (kd != KdVariant::kNone) detail::add_linear(p, "kd", d, static_cast<std::size_t>(cfg.kd_dim), rng);
  for (int q = 0; q < cfg.num_codebooks_Q; ++q)
    p.add(emb_name(q), detail::normal_tensor<T>({static_cast<std::size_t>(cfg.vocab_K) + 1, d}, 0.02, rng));
  p.add("gen/null", detail::normal_tensor<T>({1, d}, 0.02, rng));
  add_transformer_params(p, "gen", cfg.n_blocks_generator, d, mlp, rng);
  detail::add_linear(p, "gen/head", d, static_cast<std::size_t>(cfg.num_codebooks_Q * cfg.vocab_K), rng);
  m.bn = NormStats::identity(c, bn_momentum);
  return m;
}

/// Overwrites the embedding tables with a codec export.
template <class T>
void apply_embedding_init(MaskModel<T>& m, const EmbeddingInit& init) {
  MASKGRAM_REQUIRE(static_cast<int>(init.tables.size()) == m.cfg.num_codebooks_Q,
                   "embedding init has the wrong number of stages");
  for (int q = 0; q < m.cfg.num_codebooks_Q; ++q) {
    auto& dst = m.params.at(emb_name(q));
    const auto& src = init.tables[static_cast<std::size_t>(q)];
    MASKGRAM_REQUIRE(src.shape == dst.shape, "embedding init shape does not match the model");
    dst = src.template cast<T>();
  }
}

// ---- graph builders --------------------------------------------------------

/// `normalized` is the per-bin normalized input before the affine step.
template <class T>
Var encoder_graph(Graph<T>& g, const MaskModel<T>& m, const Tensor<double>& normalized) {
  const auto& p = m.params;
  if (static_cast<int>(normalized.cols()) != m.cfg.input_channels)
    throw ContractError("encoder expects " + std::to_string(m.cfg.input_channels) + " channels, got " +
                        std::to_string(normalized.cols()));
  MASKGRAM_REQUIRE(static_cast<int>(normalized.rows()) <= m.cfg.max_T, "window longer than max_T frames");
  Var x = g.constant(normalized.template cast<T>());
  x = g.add_row(g.mul_row(x, g.parameter(p, "enc/bn/gain")), g.parameter(p, "enc/bn/bias"));
  x = linear(g, p, "enc/in", x);
  x = g.add(x, g.constant(sinusoidal_pe<T>(normalized.rows(), static_cast<std::size_t>(m.cfg.d))));
  x = forward_transformer(g, p, "enc", x, 0, m.cfg.n_blocks_encoder, m.cfg.n_heads);
  return norm(g, p, "enc/ln_final", x);
}

/// Adaptive pooling to the target frame count followed by the KD projection.
template <class T>
Var kd_head_graph(Graph<T>& g, const MaskModel<T>& m, Var condition, std::size_t frames) {
  MASKGRAM_REQUIRE(m.has_kd_head(), "model has no KD head");
  ++counters::kd_head_evaluations;
  return linear(g, m.params, "kd", g.pool_rows(condition, frames));
}

template <class T>
Var embed_graph(Graph<T>& g, const MaskModel<T>& m, const Codegram& cg) {
  MASKGRAM_REQUIRE(cg.Q == m.cfg.num_codebooks_Q && cg.K == m.cfg.vocab_K, "codegram does not match the model");
  for (int v : cg.tokens)
    if (v < 0 || v > cg.K) throw ContractError("token id " + std::to_string(v) + " outside [0, K]");
  Var acc;
  for (int q = 0; q < cg.Q; ++q) {
    std::span<const int> row(cg.tokens.data() + static_cast<std::size_t>(q * cg.T), static_cast<std::size_t>(cg.T));
    const Var e = g.gather_rows(g.parameter(m.params, emb_name(q)), row);
    acc = q == 0 ? e : g.add(acc, e);
  }
  return acc;
}

/// T x (Q*K) logits; column block q holds codebook q.
template <class T>
Var generator_graph(Graph<T>& g, const MaskModel<T>& m, const Codegram& input, std::optional<Var> condition) {
  const auto frames = static_cast<std::size_t>(input.T);
  MASKGRAM_REQUIRE(input.T <= m.cfg.max_T, "window longer than max_T frames");
  Var x = embed_graph(g, m, input);
  const Var cond = condition ? *condition : g.broadcast_row(g.parameter(m.params, "gen/null"), frames);
  MASKGRAM_REQUIRE(g.value(cond).rows() == frames, "condition and codegram frame counts differ");
  x = g.add(x, cond);
  x = g.add(x, g.constant(sinusoidal_pe<T>(frames, static_cast<std::size_t>(m.cfg.d))));
  x = forward_transformer(g, m.params, "gen", x, 0, m.cfg.n_blocks_generator, m.cfg.n_heads);
  x = norm(g, m.params, "gen/ln_final", x);
  return linear(g, m.params, "gen/head", x);
}

// ---- value-level API -------------------------------------------------------

struct EncodeResult {
  ConditionState condition;
  std::optional<Tensor<double>> kd_prediction;
};

/// Eval mode normalizes with the running statistics and never touches the KD
/// head. Train mode uses the input's own statistics (folding them into
/// *train_stats when given) and returns the KD prediction pooled to
/// `kd_frames` when the model has a head.
template <class T>
EncodeResult encode_speech(const MaskModel<T>& m, const Tensor<double>& feats, Mode mode, std::size_t kd_frames = 0,
                           NormStats* train_stats = nullptr) {
  if (static_cast<int>(feats.cols()) != m.cfg.input_channels)
    throw ContractError("encoder expects " + std::to_string(m.cfg.input_channels) + " channels, got " +
                        std::to_string(feats.cols()));
  NormStats local = m.bn;
  NormStats& stats = (mode == Mode::kTrain && train_stats) ? *train_stats : local;
  std::vector<Tensor<double>> one{feats};
  const auto normalized = per_bin_normalize(one, stats, mode);
  Graph<T> g(false);
  const Var cond = encoder_graph(g, m, normalized[0]);
  EncodeResult out;
  out.condition.features = g.value(cond).template cast<double>();
  if (mode == Mode::kTrain && m.has_kd_head() && kd_frames > 0)
    out.kd_prediction = g.value(kd_head_graph(g, m, cond, kd_frames)).template cast<double>();
  return out;
}

/// Diagnostic read-out of the KD head with running statistics, pooled to
/// `kd_frames`. Inference never calls this.
template <class T>
Tensor<double> kd_probe(const MaskModel<T>& m, const Tensor<double>& feats, std::size_t kd_frames) {
  MASKGRAM_REQUIRE(m.has_kd_head(), "model has no KD head");
  MASKGRAM_REQUIRE(kd_frames >= 1, "kd_frames must be positive");
  if (static_cast<int>(feats.cols()) != m.cfg.input_channels)
    throw ContractError("encoder expects " + std::to_string(m.cfg.input_channels) + " channels, got " +
                        std::to_string(feats.cols()));
  NormStats stats = m.bn;
  std::vector<Tensor<double>> one{feats};
  const auto normalized = per_bin_normalize(one, stats, Mode::kEval);
  Graph<T> g(false);
  const Var cond = encoder_graph(g, m, normalized[0]);
  return g.value(kd_head_graph(g, m, cond, kd_frames)).template cast<double>();
}

/// Frame t = sum over q of table_q[token(q, t)].
template <class T>
Tensor<double> embed_codegram(const MaskModel<T>& m, const Codegram& cg) {
  Graph<T> g(false);
  return g.value(embed_graph(g, m, cg)).template cast<double>();
}

/// Q x T x K logits for a (partially masked) codegram.
template <class T>
Tensor<double> generator_logits(const MaskModel<T>& m, const Codegram& input, const ConditionState& condition) {
  Graph<T> g(false);
  std::optional<Var> cond;
  if (!condition.null) cond = g.constant(condition.features.template cast<T>());
  const auto& flat = g.value(generator_graph(g, m, input, cond));
  const auto q = static_cast<std::size_t>(input.Q), t = static_cast<std::size_t>(input.T),
             k = static_cast<std::size_t>(input.K);
  Tensor<double> out({q, t, k});
  for (std::size_t a = 0; a < q; ++a)
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t j = 0; j < k; ++j) out.data[(a * t + f) * k + j] = static_cast<double>(flat.at(f, a * k + j));
  return out;
}

/// With probability p the condition is replaced by the null embedding.
inline ConditionState drop_condition(const ConditionState& condition, double p, Rng& rng) {
  MASKGRAM_REQUIRE(p >= 0.0 && p <= 1.0, "condition drop probability must lie in [0, 1]");
  if (rng.uniform() < p) return ConditionState::null_condition();
  return condition;
}

inline Codegram apply_mask(const Codegram& target, const MaskPlan& plan) {
  MASKGRAM_REQUIRE(plan.Q == target.Q && plan.T == target.T, "mask plan does not match the codegram");
  Codegram in = target;
  for (std::size_t i = 0; i < in.tokens.size(); ++i)
    if (plan.grid[i]) in.tokens[i] = target.K;
  return in;
}

// ---- loss ------------------------------------------------------------------

struct TrainingExample {
  Tensor<double> features;  // distorted compressed STFT, T x C
  Codegram target;          // clean codegram, Q x T
  std::optional<TeacherTarget> kd_target;
};

struct SampleGraph {
  Var total;
  Var ce;
  Var kd;  // invalid when the model has no KD head
  bool empty_mask = false;
};

/// Builds ce + kd for one sample. `normalized` comes from the batch-level
/// normalization and is a constant of the graph.
template <class T>
SampleGraph sample_loss_graph(Graph<T>& g, const MaskModel<T>& m, const Tensor<double>& normalized,
                              const TrainingExample& ex, const MaskPlan& plan, bool null_condition) {
  if (static_cast<std::size_t>(ex.target.T) != normalized.rows())
    throw ContractError("encoder frames (" + std::to_string(normalized.rows()) + ") and codegram frames (" +
                        std::to_string(ex.target.T) + ") differ");
  for (std::size_t i = 0; i < ex.target.tokens.size(); ++i)
    if (plan.grid[i] && ex.target.tokens[i] == ex.target.K)
      throw ContractError("training target contains a MASK token at a masked position");
  SampleGraph s;
  const Var cond = encoder_graph(g, m, normalized);
  const Var logits = generator_graph(g, m, apply_mask(ex.target, plan), null_condition ? std::nullopt : std::optional(cond));
  s.ce = g.masked_cross_entropy(logits, static_cast<std::size_t>(ex.target.Q), ex.target.tokens, plan.grid,
                                &s.empty_mask);
  s.total = s.ce;
  if (m.has_kd_head()) {
    if (!ex.kd_target) throw ContractError("KD variant " + std::string(to_string(m.kd)) + " needs a teacher target");
    const auto& tt = *ex.kd_target;
    const Var pred = kd_head_graph(g, m, cond, tt.frames());
    if (tt.discrete) {
      const std::vector<std::uint8_t> all(tt.tokens.size(), 1);
      s.kd = g.masked_cross_entropy(pred, 1, tt.tokens, all);
    } else {
      if (g.value(pred).cols() != tt.feats.cols()) throw ContractError("KD head width does not match the target");
      s.kd = g.mse(pred, tt.feats.template cast<T>());
    }
    s.total = g.add(s.ce, s.kd);
  }
  return s;
}

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double kd = 0.0;
};

/// Batch mean of ce and kd (total = ce + kd) with train-mode batch
/// statistics; the model's running statistics are left alone.
template <class T>
LossParts joint_loss(const MaskModel<T>& m, std::span<const TrainingExample> batch, std::span<const MaskPlan> plans,
                     std::span<const std::uint8_t> null_flags) {
  MASKGRAM_REQUIRE(!batch.empty() && plans.size() == batch.size() && null_flags.size() == batch.size(),
                   "batch, plans and condition flags must have equal sizes");
  std::vector<Tensor<double>> feats;
  for (const auto& ex : batch) feats.push_back(ex.features);
  NormStats scratch = m.bn;
  const auto normalized = per_bin_normalize(feats, scratch, Mode::kTrain);
  LossParts out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Graph<T> g(false);
    const auto s = sample_loss_graph(g, m, normalized[i], batch[i], plans[i], null_flags[i] != 0);
    out.ce += static_cast<double>(g.value(s.ce).data[0]);
    if (s.kd.valid()) out.kd += static_cast<double>(g.value(s.kd).data[0]);
  }
  out.ce /= static_cast<double>(batch.size());
  out.kd /= static_cast<double>(batch.size());
  out.total = out.ce + out.kd;
  return out;
}

// ---- training --------------------------------------------------------------

struct TrainOptions {
  int steps = 2000;
  int batch = 8;
  AdamOptions adam{1e-3, 0.9, 0.999, 1e-8};
  double cond_drop = 0.1;
  int span_length = 0;  // 0 = token masking
  std::uint64_t seed = 0;
  int threads = 1;
};

struct StepLog {
  int step = 0;
  double total = 0.0;
  double ce = 0.0;
  double kd = 0.0;
  double lr = 0.0;
};

/// Mask plan and condition-drop decision for batch slot `slot` of `step`.
/// Derived from the seed alone so results do not depend on thread count.
struct SlotDraw {
  MaskPlan plan;
  bool null_condition = false;
};

inline SlotDraw draw_slot(const Codegram& target, const TrainOptions& opt, int step, int slot) {
  Rng rng(derive_seed(opt.seed, 0x5107, static_cast<std::uint64_t>(step) * 65536u + static_cast<std::uint64_t>(slot)));
  SlotDraw d;
  d.plan = training_mask(target.Q, target.T, opt.span_length, rng.next_u64());
  d.null_condition = rng.uniform() < opt.cond_drop;
  return d;
}

template <class T>
class Trainer {
 public:
  Trainer(MaskModel<T>& model, std::span<const TrainingExample> data, TrainOptions opt)
      : model_(model), data_(data), opt_(opt) {
    MASKGRAM_REQUIRE(!data_.empty(), "training set is empty");
    MASKGRAM_REQUIRE(opt_.batch >= 1 && opt_.steps >= 0, "invalid batch size or step count");
  }

  int steps_done() const { return step_; }
  const AdamState<T>& adam_state() const { return adam_; }

  /// Batch indices for `step`: consecutive slices of per-epoch shuffles.
  std::vector<std::size_t> batch_indices(int step) const {
    std::vector<std::size_t> out;
    const std::size_t n = data_.size();
    for (int s = 0; s < opt_.batch; ++s) {
      const std::size_t flat = static_cast<std::size_t>(step) * static_cast<std::size_t>(opt_.batch) +
                               static_cast<std::size_t>(s);
      const std::size_t epoch = flat / n, pos = flat % n;
      out.push_back(epoch_order(epoch)[pos]);
    }
    return out;
  }

  StepLog step() {
    const auto idx = batch_indices(step_);
    const std::size_t b = idx.size();
    std::vector<Tensor<double>> feats;
    for (auto i : idx) feats.push_back(data_[i].features);
    const auto normalized = per_bin_normalize(feats, model_.bn, Mode::kTrain);

    std::vector<TensorMap<T>> grads(b);
    std::vector<double> ce(b, 0.0), kd(b, 0.0);
    const T inv_b = T(1) / static_cast<T>(b);
    auto work = [&](std::size_t s) {
      const auto& ex = data_[idx[s]];
      const auto draw = draw_slot(ex.target, opt_, step_, static_cast<int>(s));
      Graph<T> g;
      const auto sg = sample_loss_graph(g, model_, normalized[s], ex, draw.plan, draw.null_condition);
      ce[s] = static_cast<double>(g.value(sg.ce).data[0]);
      if (sg.kd.valid()) kd[s] = static_cast<double>(g.value(sg.kd).data[0]);
      g.backward(g.scale(sg.total, inv_b));
      grads[s] = g.parameter_grads();
    };
    run_parallel(b, work);

    // Reduction in slot order keeps the sum independent of scheduling. Slots
    // can touch different parameters (gen/null only under a null condition).
    TensorMap<T> total = std::move(grads[0]);
    for (std::size_t s = 1; s < b; ++s)
      for (auto& [name, add] : grads[s]) {
        auto it = total.find(name);
        if (it == total.end()) {
          total.emplace(name, std::move(add));
          continue;
        }
        for (std::size_t i = 0; i < add.size(); ++i) it->second.data[i] += add.data[i];
      }
    adam_step(model_.params, total, adam_, opt_.adam);
    StepLog log;
    log.step = step_;
    log.ce = std::accumulate(ce.begin(), ce.end(), 0.0) / static_cast<double>(b);
    log.kd = std::accumulate(kd.begin(), kd.end(), 0.0) / static_cast<double>(b);
    log.total = log.ce + log.kd;
    log.lr = opt_.adam.lr;
    ++step_;
    return log;
  }

  /// Runs the remaining steps, calling `on_step` after each.
  void run(const std::function<void(const StepLog&)>& on_step = {}) {
    while (step_ < opt_.steps) {
      const auto log = step();
      if (on_step) on_step(log);
    }
  }

 private:
  const std::vector<std::size_t>& epoch_order(std::size_t epoch) const {
    if (epoch != cached_epoch_) {
      order_.resize(data_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng(derive_seed(opt_.seed, 0xe70c, epoch));
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
      cached_epoch_ = epoch;
    }
    return order_;
  }

  void run_parallel(std::size_t n, const std::function<void(std::size_t)>& fn) const {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, opt_.threads)));
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  MaskModel<T>& model_;
  std::span<const TrainingExample> data_;
  TrainOptions opt_;
  AdamState<T> adam_;
  int step_ = 0;
  mutable std::vector<std::size_t> order_;
  mutable std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
};

// ---- persistence -----------------------------------------------------------

inline std::string model_config_text(const ModelConfig& c, KdVariant kd) {
  std::ostringstream s;
  s << "d=" << c.d << "\nn_heads=" << c.n_heads << "\nn_blocks_encoder=" << c.n_blocks_encoder
    << "\nn_blocks_generator=" << c.n_blocks_generator << "\nmlp_mult=" << c.mlp_mult << "\nvocab_K=" << c.vocab_K
    << "\nnum_codebooks_Q=" << c.num_codebooks_Q << "\nmax_T=" << c.max_T << "\ninput_channels=" << c.input_channels
    << "\nkd_dim=" << c.kd_dim << "\nkd=" << to_string(kd) << "\n";
  return s.str();
}

inline std::pair<ModelConfig, KdVariant> parse_model_config_text(const std::string& text) {
  ModelConfig c;
  KdVariant kd = KdVariant::kNone;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "kd") {
      kd = parse_kd_variant(v);
      continue;
    }
    const int x = std::stoi(v);
    if (k == "d") c.d = x;
    else if (k == "n_heads") c.n_heads = x;
    else if (k == "n_blocks_encoder") c.n_blocks_encoder = x;
    else if (k == "n_blocks_generator") c.n_blocks_generator = x;
    else if (k == "mlp_mult") c.mlp_mult = x;
    else if (k == "vocab_K") c.vocab_K = x;
    else if (k == "num_codebooks_Q") c.num_codebooks_Q = x;
    else if (k == "max_T") c.max_T = x;
    else if (k == "input_channels") c.input_channels = x;
    else if (k == "kd_dim") c.kd_dim = x;
    else throw IoError("unknown model shape key '" + k + "'");
  }
  c.validate();
  return {c, kd};
}

template <class T>
void save_model(Checkpoint& ck, const MaskModel<T>& m) {
  ck.put_text("model/shape", model_config_text(m.cfg, m.kd));
  for (const auto& [name, t] : m.params.tensors()) ck.put_tensor("model/param/" + name, t);
  ck.put<double>("model/bn/mean", m.bn.mean, {m.bn.mean.size()});
  ck.put<double>("model/bn/var", m.bn.var, {m.bn.var.size()});
  const std::vector<double> mom{m.bn.momentum};
  ck.put<double>("model/bn/momentum", mom, {1});
}

template <class T>
MaskModel<T> load_model(const Checkpoint& ck) {
  if (!ck.contains("model/shape")) throw IoError("checkpoint holds no model");
  const auto [cfg, kd] = parse_model_config_text(ck.text("model/shape"));
  MaskModel<T> m = init_model<T>(cfg, kd, 0);
  for (auto& [name, t] : m.params.tensors()) {
    auto loaded = ck.tensor<T>("model/param/" + name);
    if (loaded.shape != t.shape) throw IoError("parameter " + name + " has the wrong shape in the checkpoint");
    t = std::move(loaded);
  }
  m.bn.mean = ck.values<double>("model/bn/mean");
  m.bn.var = ck.values<double>("model/bn/var");
  m.bn.momentum = ck.values<double>("model/bn/momentum").at(0);
  if (m.bn.mean.size() != static_cast<std::size_t>(cfg.input_channels) || m.bn.var.size() != m.bn.mean.size())
    throw IoError("normalization statistics do not match the model input width");
  return m;
}

}  // namespace maskgram
