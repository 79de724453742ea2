// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include "maskgram/error.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  TensorMap<T> m;
  TensorMap<T> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. Parameters missing from `grads` are treated
/// as having zero gradient. The whole step is rejected before any parameter is
/// touched if a gradient is non-finite.
template <class T>
void adam_step(ParamSet<T>& params, const TensorMap<T>& grads, AdamState<T>& state,
               const AdamOptions& opt) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ContractError("gradient for unknown parameter " + name);
    if (g.size() != params.at(name).size()) throw ContractError("gradient shape mismatch for " + name);
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }
  for (auto& [name, p] : params.tensors()) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.size()) m = Tensor<T>(p.shape);
    if (v.size() != p.size()) v = Tensor<T>(p.shape);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors()) {
    auto git = grads.find(name);
    auto& m = state.m[name].data;
    auto& v = state.v[name].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = git == grads.end() ? 0.0 : static_cast<double>(git->second.data[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * g;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = opt.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) - update);
    }
  }
}

}  // namespace maskgram
