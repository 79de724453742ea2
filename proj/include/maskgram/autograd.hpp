// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-based reverse-mode differentiation over row-major matrices. Every op
// records its output on the tape together with a closure that propagates the
// output gradient to its inputs; backward() replays the closures in reverse.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "maskgram/error.hpp"
#include "maskgram/instrumentation.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

struct Var {
  static constexpr std::uint32_t kNone = ~std::uint32_t{0};
  std::uint32_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<RowMatrix<T>> as_matrix(Tensor<T>& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<const RowMatrix<T>> as_matrix(const Tensor<T>& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
class Graph {
 public:
  /// With record = false no gradients or closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor<T> value) { return push(std::move(value), false); }

  /// Leaf bound to a named parameter. Repeated calls with the same name return
  /// the same leaf so gradients from every use accumulate in one place.
  Var parameter(const std::string& name, const Tensor<T>& value) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return it->second;
    Var v = push(value, record_);
    param_ids_.emplace(name, v);
    param_order_.emplace_back(name, v);
    return v;
  }

  Var parameter(const ParamSet<T>& params, const std::string& name) {
    return parameter(name, params.at(name));
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward() target with respect to v (zeros if v was
  /// unreachable).
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(n.value.shape);
    return n.grad;
  }

  /// Gradient for every parameter leaf created on this graph.
  TensorMap<T> parameter_grads() const {
    TensorMap<T> out;
    for (const auto& [name, v] : param_order_) out.emplace(name, grad(v));
    return out;
  }

  void backward(Var loss) {
    MASKGRAM_REQUIRE(record_, "backward() on a non-recording graph");
    MASKGRAM_REQUIRE(nodes_.at(loss.id).value.size() == 1, "backward() needs a scalar loss");
    for (auto& n : nodes_) n.grad.data.clear();
    gbuf(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

  void require_finite(Var v, const std::string& where) const {
    if (!value(v).all_finite()) throw NumericError("non-finite activation in " + where);
  }

  // ---- ops -------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    MASKGRAM_REQUIRE(A.cols() == B.rows(), "matmul shape mismatch");
    Tensor<T> C = Tensor<T>::matrix(A.rows(), B.cols());
    as_matrix(C).noalias() = as_matrix(A) * as_matrix(B);
    return push_op(std::move(C), {a, b}, [this, a, b, out = next_id()] {
      auto G = as_matrix(nodes_[out.id].grad);
      if (needs(a)) gmat(a).noalias() += G * as_matrix(value(b)).transpose();
      if (needs(b)) gmat(b).noalias() += as_matrix(value(a)).transpose() * G;
    });
  }

  Var transpose(Var a) {
    const auto& A = value(a);
    Tensor<T> C = Tensor<T>::matrix(A.cols(), A.rows());
    as_matrix(C) = as_matrix(A).transpose();
    return push_op(std::move(C), {a}, [this, a, out = next_id()] {
      gmat(a) += as_matrix(nodes_[out.id].grad).transpose();
    });
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    MASKGRAM_REQUIRE(A.size() == value(b).size(), "add shape mismatch");
    Tensor<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += value(b).data[i];
    return push_op(std::move(C), {a, b}, [this, a, b, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      for (Var v : {a, b}) {
        if (!needs(v)) continue;
        T* d = gbuf(v.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }

  /// a + row broadcast over rows.
  Var add_row(Var a, Var row) {
    const auto& A = value(a);
    const auto& r = value(row);
    MASKGRAM_REQUIRE(r.size() == A.cols(), "add_row width mismatch");
    Tensor<T> C = A;
    const std::size_t n = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) C.data[i * n + j] += r.data[j];
    return push_op(std::move(C), {a, row}, [this, a, row, n, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      if (needs(a)) {
        T* d = gbuf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (needs(row)) {
        T* d = gbuf(row.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
      }
    });
  }

  /// a * row broadcast over rows (elementwise).
  Var mul_row(Var a, Var row) {
    const auto& A = value(a);
    const auto& r = value(row);
    MASKGRAM_REQUIRE(r.size() == A.cols(), "mul_row width mismatch");
    Tensor<T> C = A;
    const std::size_t n = A.cols();
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= r.data[i % n];
    return push_op(std::move(C), {a, row}, [this, a, row, n, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      const auto& av = value(a).data;
      const auto& rv = value(row).data;
      if (needs(a)) {
        T* d = gbuf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * rv[i % n];
      }
      if (needs(row)) {
        T* d = gbuf(row.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, T s) {
    Tensor<T> C = value(a);
    for (auto& x : C.data) x *= s;
    return push_op(std::move(C), {a}, [this, a, s, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      T* d = gbuf(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
    });
  }

  /// Exact (erf) GELU.
  Var gelu(Var a) {
    Tensor<T> C = value(a);
    for (auto& x : C.data) x = T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    return push_op(std::move(C), {a}, [this, a, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      const auto& x = value(a).data;
      T* d = gbuf(a.id);
      const T inv_sqrt2pi = T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * T(std::numbers::sqrt2 / 2)));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        d[i] += g[i] * (cdf + x[i] * pdf);
      }
    });
  }

  Var softmax_rows(Var a) {
    Tensor<T> C = value(a);
    const std::size_t n = C.cols();
    for (std::size_t r = 0; r < C.rows(); ++r) softmax_inplace(C.data.data() + r * n, n);
    return push_op(std::move(C), {a}, [this, a, n, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      const auto& y = nodes_[out.id].value.data;
      T* d = gbuf(a.id);
      for (std::size_t r = 0; r < g.size() / n; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) d[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }

  /// Row-wise layer normalization with per-column gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const auto& X = value(x);
    const std::size_t rows = X.rows(), n = X.cols();
    MASKGRAM_REQUIRE(value(gain).size() == n && value(bias).size() == n, "layer_norm width mismatch");
    std::vector<T> xhat(X.size());
    std::vector<T> inv_std(rows);
    Tensor<T> Y(X.shape);
    const auto& gv = value(gain).data;
    const auto& bv = value(bias).data;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = X.data.data() + r * n;
      T mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= T(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= T(n);
      inv_std[r] = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) {
        xhat[r * n + j] = (xr[j] - mean) * inv_std[r];
        Y.data[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
      }
    }
    return push_op(std::move(Y), {x, gain, bias},
                   [this, x, gain, bias, rows, n, xhat = std::move(xhat),
                    inv_std = std::move(inv_std), out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      if (needs(gain)) {
        T* d = gbuf(gain.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i] * xhat[i];
      }
      if (needs(bias)) {
        T* d = gbuf(bias.id);
        for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
      }
      if (needs(x)) {
        const auto& gv = value(gain).data;
        T* d = gbuf(x.id);
        std::vector<T> gx(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            gx[j] = g[r * n + j] * gv[j];
            m1 += gx[j];
            m2 += gx[j] * xhat[r * n + j];
          }
          m1 /= T(n);
          m2 /= T(n);
          for (std::size_t j = 0; j < n; ++j)
            d[r * n + j] += inv_std[r] * (gx[j] - m1 - xhat[r * n + j] * m2);
        }
      }
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const auto& A = value(a);
    const std::size_t n = A.cols(), w = c1 - c0;
    MASKGRAM_REQUIRE(c0 < c1 && c1 <= n, "slice_cols out of range");
    Tensor<T> C = Tensor<T>::matrix(A.rows(), w);
    for (std::size_t r = 0; r < A.rows(); ++r)
      std::copy_n(A.data.data() + r * n + c0, w, C.data.data() + r * w);
    return push_op(std::move(C), {a}, [this, a, c0, n, w, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      T* d = gbuf(a.id);
      for (std::size_t r = 0; r < g.size() / w; ++r)
        for (std::size_t j = 0; j < w; ++j) d[r * n + c0 + j] += g[r * w + j];
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    MASKGRAM_REQUIRE(!parts.empty(), "concat_cols of nothing");
    const std::size_t rows = value(parts[0]).rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (Var p : parts) {
      MASKGRAM_REQUIRE(value(p).rows() == rows, "concat_cols row mismatch");
      widths.push_back(value(p).cols());
      total += widths.back();
    }
    Tensor<T> C = Tensor<T>::matrix(rows, total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& P = value(parts[k]);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(P.data.data() + r * widths[k], widths[k], C.data.data() + r * total + off);
      off += widths[k];
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return push_op(std::move(C), ins, [this, ins, widths, rows, total, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      std::size_t off = 0;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (needs(ins[k])) {
          T* d = gbuf(ins[k].id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) d[r * widths[k] + j] += g[r * total + off + j];
        }
        off += widths[k];
      }
    });
  }

  /// Row lookup: output row t = table[ids[t]].
  Var gather_rows(Var table, std::span<const int> ids) {
    const auto& Tb = value(table);
    const std::size_t n = Tb.cols();
    Tensor<T> C = Tensor<T>::matrix(ids.size(), n);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      MASKGRAM_REQUIRE(ids[t] >= 0 && static_cast<std::size_t>(ids[t]) < Tb.rows(),
                       "gather_rows index out of range");
      std::copy_n(Tb.data.data() + static_cast<std::size_t>(ids[t]) * n, n, C.data.data() + t * n);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return push_op(std::move(C), {table}, [this, table, n, idv = std::move(idv), out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      T* d = gbuf(table.id);
      for (std::size_t t = 0; t < idv.size(); ++t)
        for (std::size_t j = 0; j < n; ++j) d[static_cast<std::size_t>(idv[t]) * n + j] += g[t * n + j];
    });
  }

  /// Repeat a single row `count` times.
  Var broadcast_row(Var row, std::size_t count) {
    const auto& R = value(row);
    const std::size_t n = R.size();
    Tensor<T> C = Tensor<T>::matrix(count, n);
    for (std::size_t t = 0; t < count; ++t) std::copy_n(R.data.data(), n, C.data.data() + t * n);
    return push_op(std::move(C), {row}, [this, row, n, out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      T* d = gbuf(row.id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
    });
  }

  /// Adaptive average pooling along rows: output row t averages input rows
  /// [floor(t*Tin/Tout), ceil((t+1)*Tin/Tout)).
  Var pool_rows(Var a, std::size_t t_out) {
    ++counters::pool_evaluations;
    const auto& A = value(a);
    MASKGRAM_REQUIRE(t_out >= 1, "pool_rows needs t_out >= 1");
    const std::size_t t_in = A.rows(), n = A.cols();
    Tensor<T> C = Tensor<T>::matrix(t_out, n);
    std::vector<std::pair<std::size_t, std::size_t>> windows(t_out);
    for (std::size_t t = 0; t < t_out; ++t) {
      const std::size_t lo = (t * t_in) / t_out;
      const std::size_t hi = ((t + 1) * t_in + t_out - 1) / t_out;
      windows[t] = {lo, hi};
      const T inv = T(1) / T(hi - lo);
      for (std::size_t s = lo; s < hi; ++s)
        for (std::size_t j = 0; j < n; ++j) C.data[t * n + j] += A.data[s * n + j] * inv;
    }
    return push_op(std::move(C), {a}, [this, a, n, windows = std::move(windows), out = next_id()] {
      const auto& g = nodes_[out.id].grad.data;
      T* d = gbuf(a.id);
      for (std::size_t t = 0; t < windows.size(); ++t) {
        const auto [lo, hi] = windows[t];
        const T inv = T(1) / T(hi - lo);
        for (std::size_t s = lo; s < hi; ++s)
          for (std::size_t j = 0; j < n; ++j) d[s * n + j] += g[t * n + j] * inv;
      }
    });
  }

  /// Mean cross-entropy over masked cells. `logits` is T x (groups*K) where
  /// column block q holds the K classes of group q; `targets` and `mask` are
  /// groups x T, row-major. An empty mask yields 0 and sets *empty_mask.
  Var masked_cross_entropy(Var logits, std::size_t groups, std::span<const int> targets,
                           std::span<const std::uint8_t> mask, bool* empty_mask = nullptr) {
    const auto& L = value(logits);
    const std::size_t frames = L.rows();
    MASKGRAM_REQUIRE(groups >= 1 && L.cols() % groups == 0, "logit width not divisible by groups");
    const std::size_t k = L.cols() / groups;
    MASKGRAM_REQUIRE(targets.size() == groups * frames && mask.size() == groups * frames,
                     "cross-entropy target/mask size mismatch");
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (empty_mask) *empty_mask = (count == 0);
    Tensor<T> out({1});
    if (count == 0) return push_op(std::move(out), {logits}, nullptr);
    // Per-cell softmax probabilities are stored for the backward pass.
    std::vector<T> probs;
    probs.reserve(count * k);
    std::vector<std::size_t> cells;
    T total = 0;
    for (std::size_t q = 0; q < groups; ++q) {
      for (std::size_t t = 0; t < frames; ++t) {
        if (!mask[q * frames + t]) continue;
        const int target = targets[q * frames + t];
        MASKGRAM_REQUIRE(target >= 0 && static_cast<std::size_t>(target) < k,
                         "masked target outside the class range");
        const T* row = L.data.data() + t * L.cols() + q * k;
        T mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        total += lse - row[target];
        for (std::size_t j = 0; j < k; ++j) probs.push_back(std::exp(row[j] - lse));
        cells.push_back(t * L.cols() + q * k);
        probs[probs.size() - k + static_cast<std::size_t>(target)] -= T(1);
      }
    }
    const T inv = T(1) / T(count);
    out.data[0] = total * inv;
    return push_op(std::move(out), {logits},
                   [this, logits, k, inv, probs = std::move(probs), cells = std::move(cells),
                    out = next_id()] {
      const T g = nodes_[out.id].grad.data[0] * inv;
      T* d = gbuf(logits.id);
      for (std::size_t c = 0; c < cells.size(); ++c)
        for (std::size_t j = 0; j < k; ++j) d[cells[c] + j] += g * probs[c * k + j];
    });
  }

  /// Mean squared error against a constant target.
  Var mse(Var pred, const Tensor<T>& target) {
    const auto& P = value(pred);
    MASKGRAM_REQUIRE(P.size() == target.size() && P.rows() == target.rows(), "mse shape mismatch");
    MASKGRAM_REQUIRE(P.size() > 0, "mse of empty tensors");
    std::vector<T> diff(P.size());
    T total = 0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      diff[i] = P.data[i] - target.data[i];
      total += diff[i] * diff[i];
    }
    Tensor<T> out({1});
    out.data[0] = total / T(P.size());
    return push_op(std::move(out), {pred}, [this, pred, diff = std::move(diff), out = next_id()] {
      const T g = nodes_[out.id].grad.data[0] * T(2) / T(diff.size());
      T* d = gbuf(pred.id);
      for (std::size_t i = 0; i < diff.size(); ++i) d[i] += g * diff[i];
    });
  }

  Var sum(Var a) {
    Tensor<T> out({1});
    for (T x : value(a).data) out.data[0] += x;
    return push_op(std::move(out), {a}, [this, a, out = next_id()] {
      const T g = nodes_[out.id].grad.data[0];
      T* d = gbuf(a.id);
      for (std::size_t i = 0; i < value(a).size(); ++i) d[i] += g;
    });
  }

  /// Arithmetic mean of scalar nodes.
  Var mean(std::span<const Var> scalars) {
    MASKGRAM_REQUIRE(!scalars.empty(), "mean of nothing");
    Var acc = scalars[0];
    for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
    return scale(acc, T(1) / T(scalars.size()));
  }

  static void softmax_inplace(T* x, std::size_t n) {
    T mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = std::exp(x[j] - mx);
      s += x[j];
    }
    for (std::size_t j = 0; j < n; ++j) x[j] /= s;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    std::function<void()> back;
    bool needs_grad = false;
  };

  Var next_id() const { return Var{static_cast<std::uint32_t>(nodes_.size())}; }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Var push(Tensor<T> value, bool needs_grad) {
    Var v = next_id();
    nodes_.push_back(Node{std::move(value), {}, nullptr, needs_grad});
    return v;
  }

  Var push_op(Tensor<T> value, std::initializer_list<Var> inputs, std::function<void()> back) {
    return push_op(std::move(value), std::vector<Var>(inputs), std::move(back));
  }

  Var push_op(Tensor<T> value, const std::vector<Var>& inputs, std::function<void()> back) {
    bool ng = false;
    if (record_)
      for (Var in : inputs) ng = ng || needs(in);
    Var v = push(std::move(value), ng);
    if (ng) nodes_.back().back = std::move(back);
    return v;
  }

  T* gbuf(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad.data.data();
  }

  Eigen::Map<RowMatrix<T>> gmat(Var v) {
    gbuf(v.id);
    return as_matrix(nodes_[v.id].grad);
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_ids_;
  std::vector<std::pair<std::string, Var>> param_order_;
};

}  // namespace maskgram
