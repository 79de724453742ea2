// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maskgram/autograd.hpp"
#include "maskgram/error.hpp"
#include "maskgram/random.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

/// Shape constants shared by the speech encoder and the generator stacks.
struct ModelConfig {
  int d = 64;
  int n_heads = 4;
  int n_blocks_encoder = 2;
  int n_blocks_generator = 2;
  int mlp_mult = 4;
  int vocab_K = 64;
  int num_codebooks_Q = 4;
  int max_T = 1024;
  int input_channels = 257;  // compressed-STFT bins fed to the encoder
  int kd_dim = 0;            // KD head width; 0 disables the head

  void validate() const {
    if (d <= 0 || n_heads <= 0 || d % n_heads != 0)
      throw ConfigError("model width d must be a positive multiple of n_heads");
    if (mlp_mult < 1) throw ConfigError("mlp_mult must be >= 1");
    if (vocab_K < 1) throw ConfigError("vocab_K must be >= 1");
    if (num_codebooks_Q < 1) throw ConfigError("num_codebooks_Q must be >= 1");
    if (n_blocks_encoder < 0 || n_blocks_generator < 0) throw ConfigError("negative block count");
    if (input_channels < 1 || max_T < 1 || kd_dim < 0) throw ConfigError("bad model dimensions");
  }
};

/// Row t, pair i = (sin(t / 10000^(2i/d)), cos(t / 10000^(2i/d))).
template <class T = double>
Tensor<T> sinusoidal_pe(std::size_t frames, std::size_t d) {
  MASKGRAM_REQUIRE(frames >= 1, "positional encoding needs at least one frame");
  if (d % 2 != 0) throw ConfigError("positional encoding width must be even");
  Tensor<T> pe = Tensor<T>::matrix(frames, d);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe.at(t, 2 * i) = static_cast<T>(std::sin(angle));
      pe.at(t, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

namespace detail {

template <class T>
Tensor<T> normal_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <class T>
void add_linear(ParamSet<T>& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  p.add(prefix + "/w", normal_tensor<T>({in, out}, 0.02, rng));
  p.add(prefix + "/b", Tensor<T>({out}));
}

template <class T>
void add_norm(ParamSet<T>& p, const std::string& prefix, std::size_t n) {
  p.add(prefix + "/gain", Tensor<T>({n}, T(1)));
  p.add(prefix + "/bias", Tensor<T>({n}));
}

}  // namespace detail

inline std::string block_prefix(const std::string& stack, int block) {
  return stack + "/block" + std::to_string(block);
}

/// Parameters of one pre-norm transformer stack.
template <class T>
void add_transformer_params(ParamSet<T>& p, const std::string& stack, int blocks, std::size_t d,
                            std::size_t mlp_mult, Rng& rng) {
  for (int b = 0; b < blocks; ++b) {
    const std::string pre = block_prefix(stack, b);
    detail::add_norm(p, pre + "/ln1", d);
    detail::add_linear(p, pre + "/attn/q", d, d, rng);
    detail::add_linear(p, pre + "/attn/k", d, d, rng);
    detail::add_linear(p, pre + "/attn/v", d, d, rng);
    detail::add_linear(p, pre + "/attn/o", d, d, rng);
    detail::add_norm(p, pre + "/ln2", d);
    detail::add_linear(p, pre + "/mlp/up", d, mlp_mult * d, rng);
    detail::add_linear(p, pre + "/mlp/down", mlp_mult * d, d, rng);
  }
  detail::add_norm(p, stack + "/ln_final", d);
}

template <class T>
Var linear(Graph<T>& g, const ParamSet<T>& p, const std::string& prefix, Var x) {
  return g.add_row(g.matmul(x, g.parameter(p, prefix + "/w")), g.parameter(p, prefix + "/b"));
}

template <class T>
Var norm(Graph<T>& g, const ParamSet<T>& p, const std::string& prefix, Var x) {
  return g.layer_norm(x, g.parameter(p, prefix + "/gain"), g.parameter(p, prefix + "/bias"), T(1e-5));
}

/// Full (non-causal) multi-head self-attention.
template <class T>
Var self_attention(Graph<T>& g, const ParamSet<T>& p, const std::string& prefix, Var x, int n_heads) {
  const std::size_t d = g.value(x).cols();
  const std::size_t dh = d / static_cast<std::size_t>(n_heads);
  const Var q = linear(g, p, prefix + "/q", x);
  const Var k = linear(g, p, prefix + "/k", x);
  const Var v = linear(g, p, prefix + "/v", x);
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
    const Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    const Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    const Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    const Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    heads.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  const Var merged = n_heads == 1 ? heads[0] : g.concat_cols(heads);
  return linear(g, p, prefix + "/o", merged);
}

/// Runs blocks [block_begin, block_end) of `stack`:
///   x <- x + Attn(LN(x));  x <- x + MLP(LN(x)).
/// An empty range returns x itself.
template <class T>
Var forward_transformer(Graph<T>& g, const ParamSet<T>& p, const std::string& stack, Var x,
                        int block_begin, int block_end, int n_heads) {
  MASKGRAM_REQUIRE(0 <= block_begin && block_begin <= block_end, "invalid block range");
  for (int b = block_begin; b < block_end; ++b) {
    const std::string pre = block_prefix(stack, b);
    MASKGRAM_REQUIRE(p.contains(pre + "/ln1/gain"), "block range exceeds stack " + stack);
    x = g.add(x, self_attention(g, p, pre + "/attn", norm(g, p, pre + "/ln1", x), n_heads));
    const Var hidden = g.gelu(linear(g, p, pre + "/mlp/up", norm(g, p, pre + "/ln2", x)));
    x = g.add(x, linear(g, p, pre + "/mlp/down", hidden));
    g.require_finite(x, stack + " block " + std::to_string(b));
  }
  return x;
}

/// Result of a standalone loss evaluation.
struct LossValue {
  double value = 0.0;
  bool empty_mask = false;
};

/// Mean negative log-softmax of the target class over masked cells.
/// logits: Q x T x K; targets and mask: Q x T row-major.
template <class T>
LossValue masked_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                               std::span<const std::uint8_t> mask) {
  MASKGRAM_REQUIRE(logits.rank() == 3, "logits must be Q x T x K");
  const std::size_t q = logits.shape[0], frames = logits.shape[1], k = logits.shape[2];
  // Re-layout to T x (Q*K) for the graph op.
  Tensor<double> flat = Tensor<double>::matrix(frames, q * k);
  for (std::size_t a = 0; a < q; ++a)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < k; ++j)
        flat.at(t, a * k + j) = static_cast<double>(logits.data[(a * frames + t) * k + j]);
  Graph<double> g(false);
  LossValue out;
  const Var loss = g.masked_cross_entropy(g.constant(std::move(flat)), q, targets, mask, &out.empty_mask);
  out.value = g.value(loss).data[0];
  return out;
}

template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape != target.shape) throw ContractError("mse_loss shape mismatch");
  Graph<T> g(false);
  return static_cast<double>(g.value(g.mse(g.constant(pred), target)).data[0]);
}

}  // namespace maskgram
