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

#include "mvcot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "mvcot/prototypes.hpp"

namespace mvcot {

double auroc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Doubled midranks stay integral, so the statistic is exact.
  std::uint64_t rank_sum2 = 0;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum2 += midrank2;
        ++pos;
      }
    }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::uint64_t u2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * pos * neg);
}

double auroc_macro(const Matrix& scores, std::span<const int> labels) {
  const Eigen::Index k = scores.cols();
  if (k < 2) throw std::invalid_argument("auroc_macro: need at least 2 classes");
  if (static_cast<Eigen::Index>(labels.size()) != scores.rows())
    throw std::invalid_argument("auroc_macro: one label per score row required");
  std::vector<double> column(labels.size());
  std::vector<std::uint8_t> positive(labels.size());
  double total = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), c);
      positive[i] = labels[i] == c ? 1 : 0;
    }
    const double a = auroc_binary(column, positive);
    if (std::isnan(a)) continue;
    total += a;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("auroc_macro: no class has both positives and negatives");
  return total / used;
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("nmi: partitions differ in size");
  if (pred.empty()) throw std::invalid_argument("nmi: empty partitions");
  const double n = static_cast<double>(pred.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    joint[{pred[i], truth[i]}] += 1.0;
    pa[pred[i]] += 1.0;
    pb[truth[i]] += 1.0;
  }
  auto entropy = [n](const std::map<int, double>& m) {
    double h = 0.0;
    for (const auto& [key, c] : m) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double ha = entropy(pa), hb = entropy(pb);
  if (ha + hb == 0.0) return 1.0;  // both partitions trivial, hence identical
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += (c / n) * std::log(c * n / (pa[key.first] * pb[key.second]));
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double clustering_nmi(const Matrix& emb, std::span<const int> labels, int classes, std::uint64_t seed) {
  constexpr int kRestarts = 10;
  std::vector<int> best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < kRestarts; ++r) {
    auto km = kmeans(emb, classes, derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    const double inertia = km.inertia_history.empty() ? 0.0 : km.inertia_history.back();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best = std::move(km.assignments);
    }
  }
  return nmi(best, labels);
}

}  // namespace mvcot
