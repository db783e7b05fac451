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

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mvcot/metrics.hpp"
#include "test_util.hpp"

namespace mvcot {
namespace {

double pair_count_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  std::uint64_t twice = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    ++np;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  for (auto p : pos) nn += !p;
  return static_cast<double>(twice) / static_cast<double>(2 * np * nn);
}

double pair_count_macro(const Matrix& scores, const std::vector<int>& labels) {
  double total = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::vector<double> s(labels.size());
    std::vector<std::uint8_t> p(labels.size());
    bool any_pos = false, any_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = scores(static_cast<Eigen::Index>(i), c);
      p[i] = labels[i] == c;
      (p[i] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) continue;
    total += pair_count_auroc(s, p);
    ++used;
  }
  return total / used;
}

TEST(Auroc, PerfectAndReversedRanking) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<std::uint8_t> p{0, 0, 1, 1};
  EXPECT_EQ(auroc_binary(s, p), 1.0);
  const std::vector<std::uint8_t> q{1, 1, 0, 0};
  EXPECT_EQ(auroc_binary(s, q), 0.0);
}

TEST(Auroc, AllTiedIsOneHalf) {
  const std::vector<double> s(6, 0.3);
  const std::vector<std::uint8_t> p{1, 0, 1, 0, 0, 1};
  EXPECT_EQ(auroc_binary(s, p), 0.5);
}

TEST(Auroc, UndefinedWithoutNegatives) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<std::uint8_t> p{1, 1};
  EXPECT_TRUE(std::isnan(auroc_binary(s, p)));
}

TEST(Auroc, MacroEqualsPairCountingBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    const int k = 2 + static_cast<int>(rng() % 4);
    Matrix scores(n, k);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
      // Coarse scores force plenty of ties.
      for (int c = 0; c < k; ++c) scores(i, c) = static_cast<double>(rng() % 7) / 7.0;
    }
    bool usable = false;
    for (int c = 0; c < k && !usable; ++c) {
      int pos = 0;
      for (int y : labels) pos += y == c;
      usable = pos > 0 && pos < n;
    }
    if (!usable) {
      EXPECT_THROW(auroc_macro(scores, labels), std::invalid_argument);
      continue;
    }
    EXPECT_EQ(auroc_macro(scores, labels), pair_count_macro(scores, labels)) << "trial " << trial;
  }
}

TEST(Auroc, MacroSkipsAbsentClass) {
  Matrix scores(4, 3);
  scores << 0.9, 0.1, 0.0, 0.8, 0.2, 0.0, 0.1, 0.9, 0.0, 0.2, 0.8, 0.0;
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_EQ(auroc_macro(scores, labels), 1.0);
}

TEST(Nmi, IdenticalPartitionsScoreOne) {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(nmi(a, a), 1.0, 1e-12);
  const std::vector<int> relabeled{5, 5, 3, 3, 9, 9};
  EXPECT_NEAR(nmi(relabeled, a), 1.0, 1e-12);
}

TEST(Nmi, ConstantPredictionScoresZero) {
  const std::vector<int> truth{0, 1, 0, 1, 2};
  const std::vector<int> pred(5, 4);
  EXPECT_EQ(nmi(pred, truth), 0.0);
}

TEST(Nmi, SymmetricAndKnownValue) {
  const std::vector<int> a{0, 0, 1, 1};
  const std::vector<int> b{0, 1, 0, 1};
  EXPECT_NEAR(nmi(a, b), 0.0, 1e-12);
  const std::vector<int> c{0, 0, 0, 1};
  EXPECT_NEAR(nmi(a, c), nmi(c, a), 1e-15);
  // H(a) = ln 2, H(c) = H(3/4, 1/4), I = H(c) - H(c|a) = H(c) - 0.5 ln 2.
  const double hc = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  const double mi = hc - 0.5 * std::log(2.0);
  EXPECT_NEAR(nmi(a, c), mi / (0.5 * (std::log(2.0) + hc)), 1e-12);
}

TEST(Nmi, InRangeOnRandomPartitions) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> a(30), b(30);
    for (auto& x : a) x = static_cast<int>(rng() % 4);
    for (auto& x : b) x = static_cast<int>(rng() % 3);
    const double v = nmi(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, nmi(b, a), 1e-12);
  }
}

TEST(Nmi, SizeMismatchIsRejected) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(nmi(a, b), std::invalid_argument);
}

TEST(ClusteringNmi, SeparatedClustersScoreOne) {
  Matrix e(40, 2);
  std::vector<int> labels(40);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (int i = 0; i < 40; ++i) {
    labels[i] = i % 4;
    const double angle = labels[i] * 1.5;
    e(i, 0) = std::cos(angle) + noise(rng);
    e(i, 1) = std::sin(angle) + noise(rng);
  }
  EXPECT_NEAR(clustering_nmi(e, labels, 4, 3), 1.0, 1e-12);
}

}  // namespace
}  // namespace mvcot
