/*
 * Copyright 2026 The mvcot Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mvcot/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "mvcot/losses.hpp"

namespace mvcot {
namespace {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

Matrix kmeans_plus_plus(const Matrix& x, int clusters, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(clusters, x.cols());
  auto first = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
  centers.row(0) = x.row(std::min(first, n - 1));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = squared_distance(x, i, centers, 0);
  for (int c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
    }
    centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(x, i, centers, c));
  }
  return centers;
}

double inertia(const Matrix& x, const Matrix& centers, const std::vector<int>& assignments) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) total += squared_distance(x, i, centers, assignments[i]);
  return total;
}

}  // namespace

std::vector<int> assign(const Matrix& emb, const Matrix& centroids) {
  if (emb.cols() != centroids.cols()) throw std::invalid_argument("assign: dimension mismatch");
  if (centroids.rows() < 1) throw std::invalid_argument("assign: no centroids");
  std::vector<int> out(static_cast<std::size_t>(emb.rows()));
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    int best = 0;
    double best_d = squared_distance(emb, i, centroids, 0);
    for (Eigen::Index j = 1; j < centroids.rows(); ++j) {
      const double d = squared_distance(emb, i, centroids, j);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    out[i] = best;
  }
  return out;
}

KMeansResult kmeans(const Matrix& emb, int clusters, std::uint64_t seed, int max_iter, double tol) {
  if (clusters < 1) throw std::invalid_argument("kmeans: cluster count must be >= 1");
  if (emb.rows() < clusters)
    throw std::invalid_argument("kmeans: " + std::to_string(emb.rows()) + " points cannot form " +
                                std::to_string(clusters) + " clusters");
  const Matrix x = l2_normalize_rows(emb);
  std::mt19937_64 rng(seed);
  KMeansResult res;
  res.centroids = kmeans_plus_plus(x, clusters, rng);

  for (int it = 0; it < max_iter; ++it) {
    res.assignments = assign(x, res.centroids);
    res.inertia_history.push_back(inertia(x, res.centroids, res.assignments));
    res.iterations = it + 1;

    Matrix next = Matrix::Zero(clusters, x.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(clusters), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      next.row(res.assignments[i]) += x.row(i);
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[c] > 0) {
        next.row(c) /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double d = squared_distance(x, i, res.centroids, res.assignments[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      next.row(c) = x.row(far);
    }
    double shift = 0.0;
    for (int c = 0; c < clusters; ++c) shift = std::max(shift, (next.row(c) - res.centroids.row(c)).norm());
    res.centroids = std::move(next);
    if (shift < tol) break;
  }
  res.assignments = assign(x, res.centroids);
  res.inertia_history.push_back(inertia(x, res.centroids, res.assignments));
  return res;
}

CrossPrototypes cross_view_prototypes(const Matrix& emb, std::span<const int> other_assign, const Matrix& fallback) {
  const Eigen::Index c = fallback.rows();
  if (static_cast<Eigen::Index>(other_assign.size()) != emb.rows())
    throw std::invalid_argument("cross_view_prototypes: one assignment per row required");
  if (fallback.cols() != emb.cols()) throw std::invalid_argument("cross_view_prototypes: dimension mismatch");
  CrossPrototypes out;
  out.prototypes = Matrix::Zero(c, emb.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const int a = other_assign[i];
    if (a < 0 || a >= c) throw std::invalid_argument("cross_view_prototypes: assignment out of range");
    out.prototypes.row(a) += emb.row(i);
    ++counts[a];
  }
  out.valid.assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index j = 0; j < c; ++j) {
    if (counts[j] > 0) {
      out.prototypes.row(j) /= static_cast<double>(counts[j]);
      out.valid[j] = 1;
    } else {
      out.prototypes.row(j) = fallback.row(j);
    }
  }
  return out;
}

PrototypeBank PrototypeBank::with_ways(std::span<const int> counts) {
  if (counts.empty()) throw std::invalid_argument("prototype bank needs at least one way");
  PrototypeBank bank;
  for (std::size_t w = 0; w < counts.size(); ++w) {
    if (counts[w] < 1) throw std::invalid_argument("prototype way sizes must be >= 1");
    if (w > 0 && counts[w] <= counts[w - 1]) throw std::invalid_argument("prototype way sizes must be strictly increasing");
    PrototypeWay way;
    way.count = counts[w];
    bank.ways.push_back(std::move(way));
  }
  return bank;
}

SelectedPrototype select_cross_prototype(const PrototypeWay& way, std::size_t i, std::size_t n_expected) {
  if (!way.initialized || way.assign_h.size() != n_expected || way.assign_g.size() != n_expected)
    throw std::logic_error("prototype bank is stale: refresh it before selecting cross-view prototypes");
  if (i >= n_expected) throw std::out_of_range("select_cross_prototype: instance index out of range");
  return {way.assign_g[i], way.assign_h[i]};
}

void moving_average_update(Matrix& intra, const Matrix& batch_emb, std::span<const int> batch_assign, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("moving average: gamma must be in [0, 1]");
  if (static_cast<Eigen::Index>(batch_assign.size()) != batch_emb.rows() || batch_emb.cols() != intra.cols())
    throw std::invalid_argument("moving average: shape mismatch");
  const Eigen::Index c = intra.rows();
  Matrix sums = Matrix::Zero(c, intra.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < batch_emb.rows(); ++i) {
    const int a = batch_assign[i];
    if (a < 0 || a >= c) throw std::invalid_argument("moving average: assignment out of range");
    sums.row(a) += batch_emb.row(i);
    ++counts[a];
  }
  for (Eigen::Index j = 0; j < c; ++j) {
    if (counts[j] == 0) continue;
    const RowVector mean = sums.row(j) / static_cast<double>(counts[j]);
    intra.row(j) = (1.0 - gamma) * intra.row(j) + gamma * mean;
  }
}

Matrix semi_supervised_prototypes(const Matrix& emb, std::span<const int> labels, int classes) {
  if (static_cast<Eigen::Index>(labels.size()) != emb.rows())
    throw std::invalid_argument("semi_supervised_prototypes: one label per row required");
  Matrix out = Matrix::Zero(classes, emb.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) throw DataError("semi_supervised_prototypes: label " + std::to_string(y) + " out of range");
    out.row(y) += emb.row(i);
    ++counts[y];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw DataError("semi_supervised_prototypes: class " + std::to_string(c) + " has no labelled samples");
    out.row(c) /= static_cast<double>(counts[c]);
  }
  return out;
}

void refresh_epoch(PrototypeBank& bank, const Matrix& emb_h, const Matrix& emb_g, RefreshMode mode,
                   std::uint64_t seed, const LabeledRefs* labeled) {
  if (emb_h.rows() != emb_g.rows()) throw std::invalid_argument("refresh_epoch: views disagree on instance count");
  if (mode == RefreshMode::labeled && labeled == nullptr)
    throw std::invalid_argument("refresh_epoch: labeled mode requires labelled references");
  const Matrix nh = l2_normalize_rows(emb_h);
  const Matrix ng = l2_normalize_rows(emb_g);

  for (std::size_t w = 0; w < bank.ways.size(); ++w) {
    auto& way = bank.ways[w];
    const bool use_labels = mode == RefreshMode::labeled && way.count == labeled->classes;
    const bool use_kmeans = !use_labels && (mode == RefreshMode::kmeans_init || !way.initialized);
    if (use_labels) {
      Matrix lh(static_cast<Eigen::Index>(labeled->indices.size()), nh.cols());
      Matrix lg(static_cast<Eigen::Index>(labeled->indices.size()), ng.cols());
      for (std::size_t r = 0; r < labeled->indices.size(); ++r) {
        lh.row(static_cast<Eigen::Index>(r)) = nh.row(static_cast<Eigen::Index>(labeled->indices[r]));
        lg.row(static_cast<Eigen::Index>(r)) = ng.row(static_cast<Eigen::Index>(labeled->indices[r]));
      }
      way.intra_h = l2_normalize_rows(semi_supervised_prototypes(lh, labeled->labels, way.count));
      way.intra_g = l2_normalize_rows(semi_supervised_prototypes(lg, labeled->labels, way.count));
    } else if (use_kmeans) {
      way.intra_h = l2_normalize_rows(kmeans(nh, way.count, derive_seed(seed, {w, 0})).centroids);
      way.intra_g = l2_normalize_rows(kmeans(ng, way.count, derive_seed(seed, {w, 1})).centroids);
    }
    way.assign_h = assign(nh, way.intra_h);
    way.assign_g = assign(ng, way.intra_g);
    auto ch = cross_view_prototypes(nh, way.assign_g, way.intra_h);
    auto cg = cross_view_prototypes(ng, way.assign_h, way.intra_g);
    way.cross_h = std::move(ch.prototypes);
    way.valid_h = std::move(ch.valid);
    way.cross_g = std::move(cg.prototypes);
    way.valid_g = std::move(cg.valid);
    way.initialized = true;
  }
}

}  // namespace mvcot
