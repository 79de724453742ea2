// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "maskgram/checkpoint.hpp"
#include "maskgram/error.hpp"
#include "maskgram/random.hpp"
#include "maskgram/tensor.hpp"

namespace maskgram {

struct KMeansCodebook {
  Tensor<double> centroids;  // K x C
  int iterations = 0;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  /// Inertia after every assignment step, starting with the initial one.
  std::vector<double> inertia_history;

  std::size_t size() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Nearest centroid per row (ties -> lowest index). Returns total inertia and
/// fills per-row distances when requested.
inline double assign_nearest(const Tensor<double>& x, const Tensor<double>& c, std::vector<int>& out,
                             std::vector<double>* dist = nullptr) {
  out.resize(x.rows());
  if (dist) dist->resize(x.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t k = 0; k < c.rows(); ++k) {
      const double d = squared_distance(x.row(i), c.row(k));
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    out[i] = arg;
    if (dist) (*dist)[i] = best;
    total += best;
  }
  return total;
}

}  // namespace detail

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
inline std::vector<int> kmeans_assign(const Tensor<double>& frames, const KMeansCodebook& codebook) {
  MASKGRAM_REQUIRE(frames.cols() == codebook.dim(), "frame dimension does not match the codebook");
  std::vector<int> out;
  detail::assign_nearest(frames, codebook.centroids, out);
  return out;
}

inline double kmeans_inertia(const Tensor<double>& frames, const KMeansCodebook& codebook) {
  std::vector<int> a;
  return detail::assign_nearest(frames, codebook.centroids, a);
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` updates have run. Clusters that empty out are
/// re-seeded at the point currently farthest from its centroid.
inline KMeansCodebook kmeans_fit(const Tensor<double>& frames, std::size_t k, int max_iters,
                                 std::uint64_t seed) {
  const std::size_t n = frames.rows(), dim = frames.cols();
  MASKGRAM_REQUIRE(k >= 1, "k-means needs at least one cluster");
  MASKGRAM_REQUIRE(n >= k, "k-means needs at least as many frames as clusters");
  Rng rng(seed);
  KMeansCodebook cb;
  cb.seed = seed;
  cb.centroids = Tensor<double>::matrix(k, dim);

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(frames.row(pick).begin(), frames.row(pick).end(), cb.centroids.row(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::squared_distance(frames.row(i), cb.centroids.row(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = (pick + 1) % n;
      continue;
    }
    double u = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      u -= d2[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<int> assign, next;
  std::vector<double> dist;
  cb.inertia_history.push_back(detail::assign_nearest(frames, cb.centroids, assign, &dist));
  for (int it = 0; it < max_iters; ++it) {
    Tensor<double> sums = Tensor<double>::matrix(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = static_cast<std::size_t>(assign[i]);
      ++counts[a];
      for (std::size_t j = 0; j < dim; ++j) sums.at(a, j) += frames.at(i, j);
    }
    std::vector<std::uint8_t> taken(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j)
          cb.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > best) {
          best = dist[i];
          far = i;
        }
      }
      taken[far] = 1;
      std::copy(frames.row(far).begin(), frames.row(far).end(), cb.centroids.row(c).begin());
    }
    cb.inertia_history.push_back(detail::assign_nearest(frames, cb.centroids, next, &dist));
    cb.iterations = it + 1;
    const bool converged = next == assign;
    assign.swap(next);
    if (converged) break;
  }
  cb.inertia = cb.inertia_history.back();
  return cb;
}

inline void save_kmeans(Checkpoint& ck, const KMeansCodebook& cb) {
  ck.put_tensor("kmeans/centroids", cb.centroids);
  std::ostringstream meta;
  meta.precision(17);
  meta << "iterations=" << cb.iterations << "\ninertia=" << cb.inertia << "\nseed=" << cb.seed << "\n";
  ck.put_text("kmeans/meta", meta.str());
}

inline KMeansCodebook load_kmeans(const Checkpoint& ck) {
  KMeansCodebook cb;
  cb.centroids = ck.tensor<double>("kmeans/centroids");
  std::istringstream meta(ck.text("kmeans/meta"));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "iterations") cb.iterations = std::stoi(value);
    else if (key == "inertia") cb.inertia = std::stod(value);
    else if (key == "seed") cb.seed = std::stoull(value);
  }
  return cb;
}

}  // namespace maskgram
