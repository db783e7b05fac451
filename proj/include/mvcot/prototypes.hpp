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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mvcot/common.hpp"

namespace mvcot {

struct KMeansResult {
  Matrix centroids;                     // [C][D], in the normalized embedding space
  std::vector<int> assignments;         // [N]
  std::vector<double> inertia_history;  // one entry per assignment step
  int iterations = 0;
};

// k-means++ seeded Lloyd iterations on the l2-normalized rows of `emb`.
KMeansResult kmeans(const Matrix& emb, int clusters, std::uint64_t seed, int max_iter = 100, double tol = 1e-6);

// Nearest centroid by Euclidean distance; ties go to the lowest index.
std::vector<int> assign(const Matrix& emb, const Matrix& centroids);

struct CrossPrototypes {
  Matrix prototypes;                // [C][D]
  std::vector<std::uint8_t> valid;  // 0 where no instance carries that assignment
};

// Row c is the mean of the rows of `emb` whose other-view assignment is c.
// Empty clusters copy the corresponding row of `fallback` and are marked invalid.
CrossPrototypes cross_view_prototypes(const Matrix& emb, std::span<const int> other_assign, const Matrix& fallback);

// Which assignment groups the batch mean in the moving-average update.
enum class MovingAverageGrouping { cross_view, intra_view };

struct PrototypeWay {
  int count = 0;
  bool initialized = false;
  Matrix intra_h, intra_g;
  Matrix cross_h, cross_g;
  std::vector<int> assign_h, assign_g;
  std::vector<std::uint8_t> valid_h, valid_g;
};

struct PrototypeBank {
  std::vector<PrototypeWay> ways;

  // Ways must be strictly increasing.
  static PrototypeBank with_ways(std::span<const int> counts);
  std::size_t instance_count() const { return ways.empty() ? 0 : ways.front().assign_h.size(); }
};

struct SelectedPrototype {
  int index_h = 0;  // row of cross_h, i.e. s^g_i
  int index_g = 0;  // row of cross_g, i.e. s^h_i
};

// Cross-view prototype lookup for instance i; throws if the bank is stale.
SelectedPrototype select_cross_prototype(const PrototypeWay& way, std::size_t i, std::size_t n_expected);

// intra[c] <- (1 - gamma) * intra[c] + gamma * mean{ batch_emb[i] : batch_assign[i] == c }
// for every c present in the batch; other rows are untouched.
void moving_average_update(Matrix& intra, const Matrix& batch_emb, std::span<const int> batch_assign, double gamma);

// Per-class means of labelled embeddings; throws DataError naming a missing class.
Matrix semi_supervised_prototypes(const Matrix& emb, std::span<const int> labels, int classes);

enum class RefreshMode { kmeans_init, moving_avg, labeled };

struct LabeledRefs {
  std::span<const std::size_t> indices;  // rows of the full embedding matrices
  std::span<const int> labels;           // parallel to indices
  int classes = 0;
};

// Epoch-start refresh. Embeddings are l2-normalized internally; intra
// prototypes are taken from k-means, kept (moving_avg), or set to labelled
// class means for the way whose count equals labeled->classes. Then every way
// gets fresh assignments and cross-view prototypes.
void refresh_epoch(PrototypeBank& bank, const Matrix& emb_h, const Matrix& emb_g, RefreshMode mode,
                   std::uint64_t seed, const LabeledRefs* labeled = nullptr);

}  // namespace mvcot
