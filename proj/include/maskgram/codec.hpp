// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Residual vector quantizer over compressed-magnitude STFT frames. Each stage
// projects the residual to an 8-dim code space, quantizes it against a
// k-means codebook and maps the code back through a least-squares output
// projection.

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "maskgram/autograd.hpp"
#include "maskgram/checkpoint.hpp"
#include "maskgram/error.hpp"
#include "maskgram/kmeans.hpp"
#include "maskgram/random.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

/// Q x T grid of token ids; the value K is the MASK sentinel.
struct Codegram {
  int Q = 0;
  int T = 0;
  int K = 0;
  std::vector<int> tokens;  // row-major, tokens[q * T + t]

  Codegram() = default;
  Codegram(int q, int t, int k, int fill) : Q(q), T(t), K(k), tokens(static_cast<std::size_t>(q * t), fill) {}

  static Codegram all_masked(int q, int t, int k) { return Codegram(q, t, k, k); }

  int mask_token() const { return K; }
  int& at(int q, int t) { return tokens[static_cast<std::size_t>(q * T + t)]; }
  int at(int q, int t) const { return tokens[static_cast<std::size_t>(q * T + t)]; }

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (int v : tokens) n += v == K ? 1 : 0;
    return n;
  }

  bool operator==(const Codegram&) const = default;
};

struct CodecStage {
  Tensor<double> in_proj;   // C x code_dim, orthonormal columns
  std::vector<double> in_bias;
  Tensor<double> codebook;  // K x code_dim
  Tensor<double> out_proj;  // code_dim x C
  std::vector<double> out_bias;
  Tensor<double> decoded;   // K x C cache: codebook * out_proj + out_bias

  void refresh_decoded() {
    decoded = Tensor<double>::matrix(codebook.rows(), out_proj.cols());
    as_matrix(decoded).noalias() = as_matrix(codebook) * as_matrix(out_proj);
    for (std::size_t k = 0; k < decoded.rows(); ++k)
      for (std::size_t j = 0; j < decoded.cols(); ++j) decoded.at(k, j) += out_bias[j];
  }
};

struct CodecParams {
  int channels = 0;
  int code_dim = 8;
  int Q = 0;
  int K = 0;
  std::vector<CodecStage> stages;
  /// Mean squared reconstruction error on the training corpus after each stage
  /// (entry 0 is the error with no stage applied).
  std::vector<double> train_mse;
};

namespace detail {

/// Index of the decoded code nearest to `r` (ties -> lowest index).
inline int nearest_decoded(const CodecStage& s, std::span<const double> r) {
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (std::size_t k = 0; k < s.decoded.rows(); ++k) {
    const double d = squared_distance(r, s.decoded.row(k));
    if (d < best) {
      best = d;
      arg = static_cast<int>(k);
    }
  }
  return arg;
}

inline double mean_square(const Tensor<double>& x) {
  double s = 0.0;
  for (double v : x.data) s += v * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

}  // namespace detail

/// Greedy stage-by-stage training on an N x C corpus of feature frames.
inline CodecParams rvq_train(const Tensor<double>& frames, int num_stages, int codebook_size,
                             std::uint64_t seed, int code_dim = 8, double ridge = 1e-6, int kmeans_iters = 50) {
  const std::size_t n = frames.rows(), c = frames.cols();
  MASKGRAM_REQUIRE(num_stages >= 1 && codebook_size >= 1, "codec needs Q >= 1 and K >= 1");
  MASKGRAM_REQUIRE(n >= static_cast<std::size_t>(codebook_size), "codec training needs N >= K frames");
  MASKGRAM_REQUIRE(c >= static_cast<std::size_t>(code_dim), "feature dim smaller than code dim");
  CodecParams cp;
  cp.channels = static_cast<int>(c);
  cp.code_dim = code_dim;
  cp.Q = num_stages;
  cp.K = codebook_size;
  Tensor<double> residual = frames;
  cp.train_mse.push_back(detail::mean_square(residual));
  const auto cd = static_cast<std::size_t>(code_dim);
  for (int q = 0; q < num_stages; ++q) {
    CodecStage s;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(q)));
    RowMatrix<double> g(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(cd));
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<RowMatrix<double>> qr(g);
    RowMatrix<double> basis = qr.householderQ() * RowMatrix<double>::Identity(g.rows(), g.cols());
    s.in_proj = Tensor<double>::matrix(c, cd);
    as_matrix(s.in_proj) = basis;
    s.in_bias.assign(cd, 0.0);

    Tensor<double> z = Tensor<double>::matrix(n, cd);
    as_matrix(z).noalias() = as_matrix(residual) * as_matrix(s.in_proj);
    const auto km = kmeans_fit(z, static_cast<std::size_t>(codebook_size), kmeans_iters,
                               derive_seed(seed, static_cast<std::uint64_t>(q), 1));
    s.codebook = km.centroids;
    const auto assign = kmeans_assign(z, km);

    // Ridge least squares from [code, 1] to the residual; the bias is not penalized.
    RowMatrix<double> x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cd + 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < cd; ++j)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            s.codebook.at(static_cast<std::size_t>(assign[i]), j);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cd)) = 1.0;
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    for (std::size_t j = 0; j < cd; ++j) gram(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += ridge;
    const Eigen::MatrixXd rhs = x.transpose() * as_matrix(residual);
    const Eigen::MatrixXd sol = gram.ldlt().solve(rhs);
    s.out_proj = Tensor<double>::matrix(cd, c);
    for (std::size_t j = 0; j < cd; ++j)
      for (std::size_t k = 0; k < c; ++k)
        s.out_proj.at(j, k) = sol(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    s.out_bias.resize(c);
    for (std::size_t k = 0; k < c; ++k) s.out_bias[k] = sol(static_cast<Eigen::Index>(cd), static_cast<Eigen::Index>(k));
    s.refresh_decoded();

    for (std::size_t i = 0; i < n; ++i) {
      const int k = detail::nearest_decoded(s, residual.row(i));
      for (std::size_t j = 0; j < c; ++j) residual.at(i, j) -= s.decoded.at(static_cast<std::size_t>(k), j);
    }
    cp.train_mse.push_back(detail::mean_square(residual));
    cp.stages.push_back(std::move(s));
  }
  return cp;
}

/// Stage-by-stage nearest-code assignment of T x C frames. `stages` limits the
/// number of quantizers used (default: all); unused rows are left at 0.
inline Codegram rvq_encode(const Tensor<double>& feats, const CodecParams& codec, int stages = -1) {
  if (static_cast<int>(feats.cols()) != codec.channels)
    throw ContractError("feature dim " + std::to_string(feats.cols()) + " does not match codec dim " +
                        std::to_string(codec.channels));
  if (stages < 0) stages = codec.Q;
  MASKGRAM_REQUIRE(stages <= codec.Q, "more stages requested than the codec has");
  const int frames = static_cast<int>(feats.rows());
  Codegram cg(codec.Q, frames, codec.K, 0);
  std::vector<double> r(feats.cols());
  for (int t = 0; t < frames; ++t) {
    auto row = feats.row(static_cast<std::size_t>(t));
    r.assign(row.begin(), row.end());
    for (int q = 0; q < stages; ++q) {
      const auto& s = codec.stages[static_cast<std::size_t>(q)];
      const int k = detail::nearest_decoded(s, r);
      cg.at(q, t) = k;
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= s.decoded.at(static_cast<std::size_t>(k), j);
    }
  }
  return cg;
}

/// Sum over the first `stages` quantizers of out_proj(codebook[token]).
inline Tensor<double> rvq_decode(const Codegram& cg, const CodecParams& codec, int stages = -1) {
  if (stages < 0) stages = cg.Q;
  MASKGRAM_REQUIRE(cg.Q <= codec.Q && stages <= cg.Q, "codegram has more stages than the codec");
  MASKGRAM_REQUIRE(cg.K == codec.K, "codegram vocabulary does not match the codec");
  for (int v : cg.tokens) {
    if (v == cg.K) throw ContractError("cannot decode a codegram that still contains MASK tokens");
    MASKGRAM_REQUIRE(v >= 0 && v < cg.K, "token id out of range");
  }
  Tensor<double> out = Tensor<double>::matrix(static_cast<std::size_t>(cg.T), static_cast<std::size_t>(codec.channels));
  for (int q = 0; q < stages; ++q) {
    const auto& s = codec.stages[static_cast<std::size_t>(q)];
    for (int t = 0; t < cg.T; ++t) {
      const auto code = s.decoded.row(static_cast<std::size_t>(cg.at(q, t)));
      auto dst = out.row(static_cast<std::size_t>(t));
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += code[j];
    }
  }
  return out;
}

struct EmbeddingInit {
  std::vector<Tensor<double>> tables;               // per stage, (K+1) x d
  std::vector<std::vector<std::uint8_t>> from_codec;  // per stage, 1 if the row came from the codec
};

/// Row j < K of stage q = first d channels of out_proj_q(codebook_q[j]);
/// row K (MASK) is a fresh normal(0, 0.02) draw.
inline EmbeddingInit export_embedding_init(const CodecParams& codec, int d, std::uint64_t seed) {
  if (d > codec.channels)
    throw ContractError("embedding width " + std::to_string(d) + " exceeds codec feature dim " +
                        std::to_string(codec.channels));
  MASKGRAM_REQUIRE(d >= 1, "embedding width must be positive");
  EmbeddingInit init;
  Rng rng(derive_seed(seed, 0xe3b));
  const auto dd = static_cast<std::size_t>(d);
  for (const auto& s : codec.stages) {
    const auto k = static_cast<std::size_t>(codec.K);
    Tensor<double> table = Tensor<double>::matrix(k + 1, dd);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < dd; ++c) table.at(j, c) = s.decoded.at(j, c);
    for (std::size_t c = 0; c < dd; ++c) table.at(k, c) = rng.normal(0.0, 0.02);
    std::vector<std::uint8_t> flags(k + 1, 1);
    flags[k] = 0;
    init.tables.push_back(std::move(table));
    init.from_codec.push_back(std::move(flags));
  }
  return init;
}

// Stage tensors are stored with the bias appended as an extra row:
// in_proj is (C+1) x code_dim, out_proj is (code_dim+1) x C.
inline void save_codec(Checkpoint& ck, const CodecParams& codec) {
  const std::vector<std::int64_t> shape = {codec.channels, codec.code_dim, codec.Q, codec.K};
  ck.put<std::int64_t>("codec/shape", shape, {4});
  ck.put<double>("codec/train_mse", codec.train_mse, {codec.train_mse.size()});
  for (int q = 0; q < codec.Q; ++q) {
    const auto& s = codec.stages[static_cast<std::size_t>(q)];
    const std::string pre = "codec/stage" + std::to_string(q) + "/";
    Tensor<double> in = Tensor<double>::matrix(s.in_proj.rows() + 1, s.in_proj.cols());
    std::copy(s.in_proj.data.begin(), s.in_proj.data.end(), in.data.begin());
    std::copy(s.in_bias.begin(), s.in_bias.end(), in.data.begin() + static_cast<std::ptrdiff_t>(s.in_proj.size()));
    Tensor<double> out = Tensor<double>::matrix(s.out_proj.rows() + 1, s.out_proj.cols());
    std::copy(s.out_proj.data.begin(), s.out_proj.data.end(), out.data.begin());
    std::copy(s.out_bias.begin(), s.out_bias.end(), out.data.begin() + static_cast<std::ptrdiff_t>(s.out_proj.size()));
    ck.put_tensor(pre + "in_proj", in);
    ck.put_tensor(pre + "codebook", s.codebook);
    ck.put_tensor(pre + "out_proj", out);
  }
}

inline CodecParams load_codec(const Checkpoint& ck) {
  const auto shape = ck.values<std::int64_t>("codec/shape");
  if (shape.size() != 4) throw IoError("malformed codec/shape record");
  CodecParams cp;
  cp.channels = static_cast<int>(shape[0]);
  cp.code_dim = static_cast<int>(shape[1]);
  cp.Q = static_cast<int>(shape[2]);
  cp.K = static_cast<int>(shape[3]);
  cp.train_mse = ck.values<double>("codec/train_mse");
  for (int q = 0; q < cp.Q; ++q) {
    const std::string pre = "codec/stage" + std::to_string(q) + "/";
    CodecStage s;
    const auto in = ck.tensor<double>(pre + "in_proj");
    const auto out = ck.tensor<double>(pre + "out_proj");
    s.codebook = ck.tensor<double>(pre + "codebook");
    if (in.rows() != static_cast<std::size_t>(cp.channels + 1) || out.rows() != static_cast<std::size_t>(cp.code_dim + 1))
      throw IoError("codec stage " + std::to_string(q) + " has inconsistent shapes");
    s.in_proj = Tensor<double>::matrix(in.rows() - 1, in.cols());
    std::copy_n(in.data.begin(), s.in_proj.size(), s.in_proj.data.begin());
    s.in_bias.assign(in.data.begin() + static_cast<std::ptrdiff_t>(s.in_proj.size()), in.data.end());
    s.out_proj = Tensor<double>::matrix(out.rows() - 1, out.cols());
    std::copy_n(out.data.begin(), s.out_proj.size(), s.out_proj.data.begin());
    s.out_bias.assign(out.data.begin() + static_cast<std::ptrdiff_t>(s.out_proj.size()), out.data.end());
    s.refresh_decoded();
    cp.stages.push_back(std::move(s));
  }
  return cp;
}

}  // namespace maskgram
