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

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mvcot/losses.hpp"
#include "mvcot/prototypes.hpp"
#include "test_util.hpp"

namespace mvcot {
namespace {

Matrix brute_group_means(const Matrix& emb, const std::vector<int>& assign, int c, const Matrix& fallback) {
  Matrix out = fallback;
  for (int k = 0; k < c; ++k) {
    RowVector sum = RowVector::Zero(emb.cols());
    int count = 0;
    for (Eigen::Index i = 0; i < emb.rows(); ++i)
      if (assign[i] == k) {
        sum += emb.row(i);
        ++count;
      }
    if (count > 0) out.row(k) = sum / count;
  }
  return out;
}

// Three tight, well separated blobs on the unit circle.
Matrix blobs(std::vector<int>* truth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double angles[] = {0.0, 2.1, 4.2};
  Matrix x(30, 2);
  truth->clear();
  for (int i = 0; i < 30; ++i) {
    const int c = i % 3;
    x(i, 0) = std::cos(angles[c]) + noise(rng);
    x(i, 1) = std::sin(angles[c]) + noise(rng);
    truth->push_back(c);
  }
  return x;
}

TEST(CrossView, HandFixture) {
  Matrix emb(3, 2);
  emb << 1, 0, 0, 1, 1, 1;
  const std::vector<int> assign_g{0, 0, 1};
  const auto out = cross_view_prototypes(emb, assign_g, Matrix::Zero(2, 2));
  Matrix expected(2, 2);
  expected << 0.5, 0.5, 1, 1;
  EXPECT_TRUE(out.prototypes.isApprox(expected, 1e-15));
  EXPECT_EQ(out.valid, (std::vector<std::uint8_t>{1, 1}));
}

TEST(CrossView, EmptyClusterFallsBack) {
  Matrix emb(3, 2);
  emb << 1, 0, 0, 1, 1, 1;
  Matrix fallback(2, 2);
  fallback << 9, 9, 7, 7;
  const std::vector<int> assign_g{0, 0, 0};
  const auto out = cross_view_prototypes(emb, assign_g, fallback);
  EXPECT_EQ(out.valid, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(out.prototypes.row(1), fallback.row(1));
}

TEST(CrossView, SinglePoint) {
  Matrix emb(1, 3);
  emb << 0.3, -0.2, 0.9;
  const std::vector<int> a{0};
  EXPECT_EQ(cross_view_prototypes(emb, a, Matrix::Zero(1, 3)).prototypes, emb);
}

TEST(CrossView, MatchesBruteForceGroupBy) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + trial % 6;
    const Matrix emb = testing::random_matrix(25, 4, 100 + trial);
    std::vector<int> assign(25);
    for (auto& a : assign) a = static_cast<int>(rng() % static_cast<std::uint64_t>(c));
    const Matrix fallback = testing::random_matrix(c, 4, 200 + trial);
    const auto out = cross_view_prototypes(emb, assign, fallback);
    EXPECT_LT((out.prototypes - brute_group_means(emb, assign, c, fallback)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(KMeans, InertiaNonIncreasingAndFixedPoint) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix x = testing::random_matrix(60, 5, seed);
    const auto res = kmeans(x, 4, seed);
    for (std::size_t i = 1; i < res.inertia_history.size(); ++i)
      EXPECT_LE(res.inertia_history[i], res.inertia_history[i - 1] + 1e-12);
    EXPECT_EQ(assign(l2_normalize_rows(x), res.centroids), res.assignments);
  }
}

TEST(KMeans, SingleClusterClosedForm) {
  const Matrix x = testing::random_matrix(17, 3, 3);
  const Matrix n = l2_normalize_rows(x);
  const RowVector mean = n.colwise().mean();
  const auto res = kmeans(x, 1, 0);
  EXPECT_LT((res.centroids.row(0) - mean).cwiseAbs().maxCoeff(), 1e-12);
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n.rows(); ++i) inertia += (n.row(i) - mean).squaredNorm();
  EXPECT_NEAR(res.inertia_history.back(), inertia, 1e-10);
  for (int a : res.assignments) EXPECT_EQ(a, 0);
}

TEST(KMeans, RecoversSeparatedBlobs) {
  std::vector<int> truth;
  const Matrix x = blobs(&truth, 1);
  const auto res = kmeans(x, 3, 4);
  std::map<int, int> mapping;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto [it, inserted] = mapping.emplace(res.assignments[i], truth[i]);
    EXPECT_EQ(it->second, truth[i]);
  }
  EXPECT_EQ(mapping.size(), 3u);
}

TEST(KMeans, DeterministicAndRejectsTooFewPoints) {
  const Matrix x = testing::random_matrix(20, 3, 2);
  EXPECT_EQ(kmeans(x, 3, 5).assignments, kmeans(x, 3, 5).assignments);
  EXPECT_THROW(kmeans(x.topRows(2), 3, 5), std::invalid_argument);
}

TEST(KMeans, DuplicatePointsDoNotLeaveEmptyClusters) {
  Matrix x(6, 2);
  x << 1, 0, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1;
  const auto res = kmeans(x, 3, 1);
  EXPECT_TRUE(res.centroids.allFinite());
  EXPECT_LE(res.inertia_history.back(), 1e-12);
}

TEST(KMeans, PermutationInvarianceUpToRelabeling) {
  const Matrix x = [] {
    std::vector<int> t;
    return blobs(&t, 3);
  }();
  std::vector<Eigen::Index> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  Matrix y(30, 2);
  for (int i = 0; i < 30; ++i) y.row(i) = x.row(perm[i]);
  const auto a = kmeans(x, 3, 1).assignments;
  const auto b = kmeans(y, 3, 1).assignments;
  std::map<int, int> mapping;
  for (int i = 0; i < 30; ++i) {
    auto [it, inserted] = mapping.emplace(a[perm[i]], b[i]);
    EXPECT_EQ(it->second, b[i]);
  }
}

TEST(Assign, TiesGoToLowestIndex) {
  Matrix c(2, 2);
  c << 1, 0, -1, 0;
  Matrix e(1, 2);
  e << 0, 1;
  EXPECT_EQ(assign(e, c), std::vector<int>{0});
}

TEST(MovingAverage, BoundaryRates) {
  Matrix intra = testing::random_matrix(2, 3, 1);
  const Matrix batch = testing::random_matrix(4, 3, 2);
  const std::vector<int> a{0, 0, 0, 0};
  Matrix same = intra;
  moving_average_update(same, batch, a, 0.0);
  EXPECT_EQ(same, intra);
  Matrix full = intra;
  moving_average_update(full, batch, a, 1.0);
  EXPECT_LT((full.row(0) - batch.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(full.row(1), intra.row(1));
}

TEST(MovingAverage, MatchesTelescopedClosedForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> gd(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const double gamma = gd(rng);
    const Matrix mu0 = testing::random_matrix(1, 4, 10 + trial);
    Matrix mu = mu0;
    const int steps = 1 + trial;
    std::vector<RowVector> means;
    for (int s = 0; s < steps; ++s) {
      const Matrix batch = testing::random_matrix(3, 4, 1000 * trial + s);
      const std::vector<int> a{0, 0, 0};
      means.push_back(batch.colwise().mean());
      moving_average_update(mu, batch, a, gamma);
    }
    RowVector closed = std::pow(1.0 - gamma, steps) * mu0.row(0);
    for (int s = 0; s < steps; ++s) closed += gamma * std::pow(1.0 - gamma, steps - 1 - s) * means[s];
    EXPECT_LT((mu.row(0) - closed).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(MovingAverage, TwoStepExample) {
  Matrix mu(1, 1);
  mu << 2.0;
  const double g = 0.25;
  Matrix m1(1, 1), m2(1, 1);
  m1 << 4.0;
  m2 << -8.0;
  const std::vector<int> a{0};
  moving_average_update(mu, m1, a, g);
  moving_average_update(mu, m2, a, g);
  EXPECT_DOUBLE_EQ(mu(0, 0), (1 - g) * (1 - g) * 2.0 + g * (1 - g) * 4.0 + g * -8.0);
}

TEST(SemiSupervised, ClassMeans) {
  Matrix e(3, 2);
  e << 1, 0, 0, 1, 5, 5;
  const std::vector<int> y{0, 0, 1};
  const Matrix p = semi_supervised_prototypes(e, y, 2);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  EXPECT_EQ(p.row(1), e.row(2));
}

TEST(SemiSupervised, MissingClassIsNamed) {
  const Matrix e = testing::random_matrix(3, 2, 1);
  const std::vector<int> y{0, 2, 0};
  try {
    semi_supervised_prototypes(e, y, 3);
    FAIL() << "expected DataError";
  } catch (const DataError& err) {
    EXPECT_NE(std::string(err.what()).find("class 1"), std::string::npos);
  }
}

TEST(SemiSupervised, AgreesWithKMeansOnSeparableBlobs) {
  std::vector<int> truth;
  const Matrix x = l2_normalize_rows(blobs(&truth, 2));
  const Matrix means = l2_normalize_rows(semi_supervised_prototypes(x, truth, 3));
  EXPECT_EQ(assign(x, means), truth);
}

TEST(Bank, WaysMustIncrease) {
  const int bad[] = {4, 4};
  EXPECT_THROW(PrototypeBank::with_ways(bad), std::invalid_argument);
  const int good[] = {2, 4};
  EXPECT_EQ(PrototypeBank::with_ways(good).ways.size(), 2u);
}

TEST(Bank, StaleBankIsRejected) {
  const int ways[] = {2};
  const auto bank = PrototypeBank::with_ways(ways);
  EXPECT_THROW(select_cross_prototype(bank.ways[0], 0, 10), std::logic_error);
}

TEST(Refresh, KMeansInitGivesEveryWayItsOwnPrototypes) {
  const int ways[] = {2, 4};
  auto bank = PrototypeBank::with_ways(ways);
  const Matrix h = testing::random_matrix(32, 5, 1), g = testing::random_matrix(32, 6, 2);
  refresh_epoch(bank, h, g, RefreshMode::kmeans_init, 7);
  for (const auto& way : bank.ways) {
    EXPECT_EQ(way.intra_h.rows(), way.count);
    EXPECT_EQ(way.intra_g.cols(), 6);
    EXPECT_EQ(way.assign_h.size(), 32u);
    // Lookups after a refresh always succeed and hit rows of the cross prototypes.
    for (std::size_t i = 0; i < 32; ++i) {
      const auto s = select_cross_prototype(way, i, 32);
      EXPECT_EQ(s.index_h, way.assign_g[i]);
      EXPECT_EQ(s.index_g, way.assign_h[i]);
      EXPECT_TRUE(way.valid_h[s.index_h]);
      EXPECT_TRUE(way.valid_g[s.index_g]);
    }
    const Matrix nh = l2_normalize_rows(h);
    EXPECT_LT((way.cross_h - brute_group_means(nh, way.assign_g, way.count, way.intra_h)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Refresh, MovingAverageModeKeepsIntraPrototypes) {
  const int ways[] = {3};
  auto bank = PrototypeBank::with_ways(ways);
  const Matrix h = testing::random_matrix(20, 4, 1), g = testing::random_matrix(20, 4, 2);
  refresh_epoch(bank, h, g, RefreshMode::kmeans_init, 7);
  const Matrix before = bank.ways[0].intra_h;
  refresh_epoch(bank, testing::random_matrix(20, 4, 3), g, RefreshMode::moving_avg, 8);
  EXPECT_EQ(bank.ways[0].intra_h, before);
  EXPECT_EQ(bank.ways[0].assign_h, assign(l2_normalize_rows(testing::random_matrix(20, 4, 3)), before));
}

TEST(Refresh, LabeledModeOnlyTouchesTheClassWay) {
  const int ways[] = {2, 4};
  auto bank = PrototypeBank::with_ways(ways);
  const Matrix h = testing::random_matrix(16, 3, 1), g = testing::random_matrix(16, 3, 2);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const std::vector<int> y{0, 1, 0, 1};
  const LabeledRefs refs{idx, y, 2};
  refresh_epoch(bank, h, g, RefreshMode::labeled, 3, &refs);
  Matrix lh(4, 3);
  for (int r = 0; r < 4; ++r) lh.row(r) = l2_normalize_rows(h).row(r);
  EXPECT_LT((bank.ways[0].intra_h - l2_normalize_rows(semi_supervised_prototypes(lh, y, 2))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(bank.ways[1].intra_h.rows(), 4);
}

}  // namespace
}  // namespace mvcot
