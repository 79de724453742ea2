// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference check of every parameter gradient of the joint
// loss on a tiny double-precision model.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "maskgram/generator.hpp"

namespace maskgram {

struct GradcheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t checked = 0;

  bool passed(double tol = 1e-3) const { return checked > 0 && max_rel_error < tol; }
};

struct GradcheckOptions {
  double step = 1e-5;
  double denominator_floor = 1e-6;  // relative error = |a - n| / max(|a|, |n|, floor)
  std::uint64_t seed = 7;
};

namespace detail {

struct GradcheckProblem {
  MaskModel<double> model;
  std::vector<TrainingExample> batch;
  std::vector<MaskPlan> plans;
  std::vector<std::uint8_t> nulls;
  std::vector<Tensor<double>> normalized;
};

/// d = 8, 2 + 2 blocks, Q = 2, K = 8, T = 6; two samples, the second with a
/// null condition and span masking.
inline GradcheckProblem gradcheck_problem(KdVariant kd, std::uint64_t seed) {
  ModelConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.n_blocks_encoder = 2;
  c.n_blocks_generator = 2;
  c.vocab_K = 8;
  c.num_codebooks_Q = 2;
  c.max_T = 16;
  c.input_channels = 10;
  const bool discrete = kd == KdVariant::kL9K500;
  c.kd_dim = kd == KdVariant::kNone ? 0 : (discrete ? 5 : 4);
  GradcheckProblem p{init_model<double>(c, kd, seed), {}, {}, {}, {}};
  // Default init leaves biases at zero and gains at one; spread every
  // parameter so no path sits at a special point.
  Rng rng(derive_seed(seed, 1));
  for (auto& [_, t] : p.model.params.tensors())
    for (auto& v : t.data) v += rng.normal(0.0, 0.3);

  constexpr int kT = 6;
  for (int s = 0; s < 2; ++s) {
    TrainingExample ex;
    ex.features = Tensor<double>::matrix(kT, 10);
    for (auto& v : ex.features.data) v = std::abs(rng.normal()) + 0.05;
    ex.target = Codegram(2, kT, 8, 0);
    for (auto& v : ex.target.tokens) v = static_cast<int>(rng.below(8));
    if (kd != KdVariant::kNone) {
      TeacherTarget tt;
      tt.variant = kd;
      tt.discrete = discrete;
      if (discrete) {
        tt.tokens.resize(4);
        for (auto& v : tt.tokens) v = static_cast<int>(rng.below(5));
      } else {
        tt.feats = Tensor<double>::matrix(4, 4);
        for (auto& v : tt.feats.data) v = rng.normal();
      }
      ex.kd_target = tt;
    }
    p.batch.push_back(std::move(ex));
  }
  p.plans = {token_mask(2, kT, 0.5, derive_seed(seed, 2)), span_mask(2, kT, 0.6, 2, derive_seed(seed, 3))};
  p.nulls = {0, 1};
  std::vector<Tensor<double>> feats{p.batch[0].features, p.batch[1].features};
  NormStats scratch = p.model.bn;
  p.normalized = per_bin_normalize(feats, scratch, Mode::kTrain);
  return p;
}

inline double gradcheck_loss(const GradcheckProblem& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.batch.size(); ++i) {
    Graph<double> g(false);
    const auto s = sample_loss_graph(g, p.model, p.normalized[i], p.batch[i], p.plans[i], p.nulls[i] != 0);
    total += g.value(s.total).data[0];
  }
  return total;
}

inline TensorMap<double> gradcheck_grads(const GradcheckProblem& p) {
  TensorMap<double> sum;
  for (std::size_t i = 0; i < p.batch.size(); ++i) {
    Graph<double> g;
    const auto s = sample_loss_graph(g, p.model, p.normalized[i], p.batch[i], p.plans[i], p.nulls[i] != 0);
    g.backward(s.total);
    for (auto& [name, grad] : g.parameter_grads()) {
      auto it = sum.find(name);
      if (it == sum.end()) {
        sum.emplace(name, grad);
      } else {
        for (std::size_t j = 0; j < grad.size(); ++j) it->second.data[j] += grad.data[j];
      }
    }
  }
  return sum;
}

}  // namespace detail

/// Compares analytic and central-difference gradients for every scalar of
/// every parameter. Parameters absent from the analytic map count as zero.
inline GradcheckReport gradcheck(KdVariant kd, const GradcheckOptions& opt = {}) {
  auto p = detail::gradcheck_problem(kd, opt.seed);
  const auto analytic = detail::gradcheck_grads(p);
  GradcheckReport report;
  std::vector<std::string> names;
  for (const auto& [name, _] : p.model.params.tensors()) names.push_back(name);
  for (const auto& name : names) {
    auto& param = p.model.params.at(name);
    const auto it = analytic.find(name);
    GradcheckEntry e{name, param.size(), 0.0};
    for (std::size_t j = 0; j < param.size(); ++j) {
      const double orig = param.data[j];
      param.data[j] = orig + opt.step;
      const double up = detail::gradcheck_loss(p);
      param.data[j] = orig - opt.step;
      const double down = detail::gradcheck_loss(p);
      param.data[j] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = it == analytic.end() ? 0.0 : it->second.data[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
      e.max_rel_error = std::max(e.max_rel_error, std::abs(a - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.checked += e.size;
    report.entries.push_back(std::move(e));
  }
  return report;
}

/// Continuous (average-feature) and discrete (clustered layer) KD heads.
inline GradcheckReport gradcheck_suite(const GradcheckOptions& opt = {}) {
  GradcheckReport all;
  for (KdVariant kd : {KdVariant::kAvgFeature, KdVariant::kL9K500}) {
    auto r = gradcheck(kd, opt);
    for (auto& e : r.entries) {
      e.name = std::string(to_string(kd)) + ":" + e.name;
      all.entries.push_back(std::move(e));
    }
    all.max_rel_error = std::max(all.max_rel_error, r.max_rel_error);
    all.checked += r.checked;
  }
  return all;
}

}  // namespace maskgram
