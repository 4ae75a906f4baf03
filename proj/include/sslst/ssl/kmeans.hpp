/*
 * Copyright 2026 The sslst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <limits>
#include <set>
#include <vector>

#include "sslst/numerics/tensor.hpp"

namespace sslst::ssl {

struct KMeansResult {
  Tensor<double> centroids;           // [V, D]
  std::vector<long> assignment;       // per input row
  std::vector<double> distortion;     // mean squared distance after each assignment step
};

inline double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

// Nearest centroid per row; ties go to the lowest index.
template <typename T>
std::vector<long> nearest_centroids(const Tensor<T>& x, const Tensor<T>& centroids, std::vector<double>* dist = nullptr) {
  const std::size_t D = centroids.dim(1), V = centroids.dim(0), N = x.rows();
  if (x.cols() != D) throw InvalidArgument("quantize: dimension " + std::to_string(x.cols()) + " vs codebook " + std::to_string(D));
  std::vector<long> out(N);
  if (dist) dist->assign(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    double best = std::numeric_limits<double>::infinity();
    long arg = 0;
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0;
      for (std::size_t d = 0; d < D; ++d) {
        const double t = static_cast<double>(x.data[n * D + d]) - static_cast<double>(centroids.data[v * D + d]);
        s += t * t;
      }
      if (s < best) {
        best = s;
        arg = static_cast<long>(v);
      }
    }
    out[n] = arg;
    if (dist) (*dist)[n] = best;
  }
  return out;
}

// Tokens and embedded vectors of z [.., D] under a codebook [V, D].
template <typename T>
std::pair<std::vector<long>, Tensor<T>> quantize(const Tensor<T>& z, const Tensor<T>& codebook) {
  auto tokens = nearest_centroids(z, codebook);
  Tensor<T> q(z.shape);
  const std::size_t D = codebook.dim(1);
  for (std::size_t n = 0; n < tokens.size(); ++n)
    std::copy_n(codebook.ptr() + static_cast<std::size_t>(tokens[n]) * D, D, q.ptr() + n * D);
  return {std::move(tokens), std::move(q)};
}

// Lloyd iterations from k-means++ seeds. A cluster left empty is re-seeded
// with the point farthest from its current centroid.
inline KMeansResult kmeans_train(const Tensor<double>& x, std::size_t V, std::size_t iters, Rng& rng) {
  if (x.rank() != 2) throw InvalidArgument("kmeans: expected [N, D] vectors");
  const std::size_t N = x.dim(0), D = x.dim(1);
  if (V < 1) throw InvalidArgument("kmeans: V must be at least 1");
  {
    std::set<std::vector<double>> distinct;
    for (std::size_t n = 0; n < N && distinct.size() < V; ++n)
      distinct.emplace(x.ptr() + n * D, x.ptr() + (n + 1) * D);
    if (distinct.size() < V)
      throw InvalidArgument("kmeans: " + std::to_string(distinct.size()) + " distinct vectors for V=" + std::to_string(V));
  }
  KMeansResult r;
  r.centroids = Tensor<double>({V, D});
  std::vector<double> d2(N, std::numeric_limits<double>::infinity());
  auto place = [&](std::size_t v, std::size_t n) {
    std::copy_n(x.ptr() + n * D, D, r.centroids.ptr() + v * D);
    for (std::size_t i = 0; i < N; ++i) d2[i] = std::min(d2[i], squared_distance(x.ptr() + i * D, x.ptr() + n * D, D));
  };
  place(0, static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(N) - 1)));
  for (std::size_t v = 1; v < V; ++v) {
    double total = 0;
    for (double d : d2) total += d;
    double u = rng.uniform01() * total;
    std::size_t pick = N - 1;
    for (std::size_t i = 0; i < N; ++i) {
      if (d2[i] > 0 && u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    while (d2[pick] == 0 && pick > 0) --pick;  // numerical tail
    place(v, pick);
  }

  std::vector<double> dist;
  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    r.assignment = nearest_centroids(x, r.centroids, &dist);
    double total = 0;
    for (double d : dist) total += d;
    r.distortion.push_back(total / static_cast<double>(N));
    if (it + 1 == std::max<std::size_t>(iters, 1)) break;

    Tensor<double> sums({V, D});
    std::vector<std::size_t> count(V, 0);
    for (std::size_t n = 0; n < N; ++n) {
      const auto v = static_cast<std::size_t>(r.assignment[n]);
      ++count[v];
      for (std::size_t d = 0; d < D; ++d) sums.data[v * D + d] += x.data[n * D + d];
    }
    for (std::size_t v = 0; v < V; ++v) {
      if (count[v] > 0) {
        for (std::size_t d = 0; d < D; ++d) r.centroids.data[v * D + d] = sums.data[v * D + d] / static_cast<double>(count[v]);
        continue;
      }
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy_n(x.ptr() + far * D, D, r.centroids.ptr() + v * D);
      dist[far] = 0.0;
    }
  }
  return r;
}

}  // namespace sslst::ssl
