// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maskgram/error.hpp"

namespace maskgram {

/// Dense row-major array of reals. Rank-1 tensors behave as a single row when
/// viewed as a matrix.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T(0))
      : shape(std::move(dims)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> dims, std::vector<T> values)
      : shape(std::move(dims)), data(std::move(values)) {
    MASKGRAM_REQUIRE(data.size() == count(shape), "tensor data does not match shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor({rows, cols}, fill);
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const {
    const std::size_t r = rows();
    return r == 0 ? 0 : data.size() / r;
  }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

/// Named parameter tensors, ordered by name so every traversal is deterministic.
template <class T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <class T>
class ParamSet {
 public:
  ParamSet() = default;

  void add(const std::string& name, Tensor<T> value) {
    MASKGRAM_REQUIRE(!tensors_.contains(name), "duplicate parameter " + name);
    tensors_.emplace(name, std::move(value));
  }

  bool contains(const std::string& name) const { return tensors_.contains(name); }

  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }

  TensorMap<T>& tensors() { return tensors_; }
  const TensorMap<T>& tensors() const { return tensors_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  TensorMap<T> tensors_;
};

}  // namespace maskgram
