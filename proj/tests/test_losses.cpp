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
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "mvcot/losses.hpp"
#include "test_util.hpp"

namespace mvcot {
namespace {

std::span<const double> row(const Matrix& m, Eigen::Index i) { return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())}; }

double direct_instance(const Matrix& z, const Matrix& zp, double tau, bool ntxent) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double num = std::exp(sim(row(z, i), row(zp, i)) / tau);
    double den = ntxent ? num : 0.0;
    for (Eigen::Index k = 0; k < z.rows(); ++k)
      if (k != i) den += std::exp(sim(row(z, i), row(z, k)) / tau);
    total -= std::log(num / den);
  }
  return total;
}

double direct_cot(const Matrix& e, const std::vector<int>& sel, const Matrix& protos, const std::vector<std::uint8_t>& valid,
                  double t) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    double den = 0.0;
    for (Eigen::Index j = 0; j < protos.rows(); ++j)
      if (valid[j]) den += std::exp(sim(row(e, i), row(protos, j)) / t);
    total -= std::log(std::exp(sim(row(e, i), row(protos, sel[i])) / t) / den);
  }
  return total;
}

template <class F>
Matrix numeric_gradient(Matrix x, F f) {
  Matrix g(x.rows(), x.cols());
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double saved = x.data()[k];
    x.data()[k] = saved + h;
    const double up = f(x);
    x.data()[k] = saved - h;
    const double down = f(x);
    x.data()[k] = saved;
    g.data()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

TEST(Sim, CosineOfKnownVectors) {
  const double a[] = {1.0, 0.0}, b[] = {1.0, 1.0};
  EXPECT_NEAR(sim(a, b), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(sim(a, a), 1.0);
}

TEST(Sim, DegenerateEmbeddingThrows) {
  const double a[] = {0.0, 0.0}, b[] = {1.0, 1.0};
  EXPECT_THROW(sim(a, b), NumericError);
}

TEST(InstanceLoss, MatchesDirectEvaluationOnRandomFixtures) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix z = testing::random_matrix(4, 3, seed);
    const Matrix zp = testing::random_matrix(4, 3, seed + 100);
    for (double tau : {0.1, 0.5, 1.0}) {
      EXPECT_NEAR(instance_loss(z, zp, tau).value, direct_instance(z, zp, tau, false), 1e-10);
      EXPECT_NEAR(instance_loss(z, zp, tau, true).value, direct_instance(z, zp, tau, true), 1e-10);
    }
  }
}

TEST(InstanceLoss, OrthonormalPairIsMinusTwo) {
  const Matrix z = Matrix::Identity(2, 2);
  EXPECT_NEAR(instance_loss(z, z, 1.0).value, -2.0, 1e-15);
}

TEST(InstanceLoss, ScaleInvariant) {
  const Matrix z = testing::random_matrix(5, 4, 1), zp = testing::random_matrix(5, 4, 2);
  EXPECT_NEAR(instance_loss(z, zp, 0.2).value, instance_loss(3.0 * z, 0.5 * zp, 0.2).value, 1e-12);
}

TEST(InstanceLoss, StableAtTinyTemperature) {
  const Matrix z = testing::random_matrix(6, 4, 3), zp = testing::random_matrix(6, 4, 4);
  const auto out = instance_loss(z, zp, 1e-3);
  EXPECT_TRUE(std::isfinite(out.value));
  EXPECT_TRUE(out.grad_clean.allFinite());
}

TEST(InstanceLoss, GradientsMatchFiniteDifferences) {
  const Matrix z = testing::random_matrix(5, 3, 8), zp = testing::random_matrix(5, 3, 9);
  for (bool ntxent : {false, true}) {
    const auto out = instance_loss(z, zp, 0.3, ntxent);
    EXPECT_LT(rel(out.grad_clean, numeric_gradient(z, [&](const Matrix& x) { return instance_loss(x, zp, 0.3, ntxent).value; })),
              1e-7);
    EXPECT_LT(rel(out.grad_augmented,
                  numeric_gradient(zp, [&](const Matrix& x) { return instance_loss(z, x, 0.3, ntxent).value; })),
              1e-7);
  }
}

TEST(InstanceLoss, RejectsSingleSampleBatch) {
  const Matrix z = Matrix::Ones(1, 3);
  EXPECT_THROW(instance_loss(z, z, 0.1), std::invalid_argument);
}

TEST(InstanceLoss, ZeroRowIsDegenerate) {
  Matrix z = testing::random_matrix(3, 3, 1);
  z.row(1).setZero();
  EXPECT_THROW(instance_loss(z, testing::random_matrix(3, 3, 2), 0.1), NumericError);
}

TEST(CotLoss, MatchesDirectEvaluationOnRandomFixtures) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix e = testing::random_matrix(4, 3, seed);
    const Matrix p = testing::random_matrix(3, 3, seed + 50);
    const std::vector<int> sel{0, 2, 1, 2};
    const std::vector<std::uint8_t> all{1, 1, 1};
    for (double t : {0.1, 1.0}) EXPECT_NEAR(cot_loss(e, sel, p, all, t).value, direct_cot(e, sel, p, all, t), 1e-10);
  }
}

TEST(CotLoss, TwoPrototypeFixture) {
  Matrix e(1, 2);
  e << 1.0, 0.0;
  const Matrix p = Matrix::Identity(2, 2);
  const std::vector<int> sel{0};
  const std::vector<std::uint8_t> valid{1, 1};
  EXPECT_NEAR(cot_loss(e, sel, p, valid, 1.0).value, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-15);
  EXPECT_NEAR(cot_loss(e, sel, p, valid, 1.0).value, 0.3133, 1e-4);
}

TEST(CotLoss, MaskedPrototypesLeaveTheDenominator) {
  const Matrix e = testing::random_matrix(3, 4, 1);
  const Matrix p = testing::random_matrix(3, 4, 2);
  const std::vector<int> sel{0, 2, 0};
  const std::vector<std::uint8_t> valid{1, 0, 1};
  const double full = cot_loss(e, sel, p, valid, 0.5).value;
  EXPECT_NEAR(full, direct_cot(e, sel, p, valid, 0.5), 1e-10);
  Matrix q = p;
  q.row(1) *= -7.0;
  EXPECT_NEAR(cot_loss(e, sel, q, valid, 0.5).value, full, 1e-12);
}

TEST(CotLoss, SelectingMaskedPrototypeIsRejected) {
  const Matrix e = testing::random_matrix(2, 3, 1), p = testing::random_matrix(2, 3, 2);
  const std::vector<int> sel{1, 0};
  const std::vector<std::uint8_t> valid{1, 0};
  EXPECT_THROW(cot_loss(e, sel, p, valid, 1.0), std::invalid_argument);
}

TEST(CotLoss, GradientMatchesFiniteDifferencesWithConstantPrototypes) {
  const Matrix e = testing::random_matrix(5, 4, 3), p = testing::random_matrix(3, 4, 4);
  const std::vector<int> sel{0, 1, 2, 1, 0};
  const std::vector<std::uint8_t> valid{1, 1, 1};
  const auto out = cot_loss(e, sel, p, valid, 0.7);
  EXPECT_LT(rel(out.grad, numeric_gradient(e, [&](const Matrix& x) { return cot_loss(x, sel, p, valid, 0.7).value; })),
            1e-7);
}

TEST(TotalLoss, CombinesTerms) {
  const auto b = total_loss(1.0, 2.0, 3.0, 4.0, 0.5);
  EXPECT_DOUBLE_EQ(b.total, 1.0 + 2.0 + 0.5 * 7.0);
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 3.0, 4.0, 0.0).total, 3.0);
}

TEST(TotalLoss, NonFiniteTermIsNamed) {
  try {
    total_loss(1.0, 2.0, std::numeric_limits<double>::infinity(), 0.0, 1.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("cot_h"), std::string::npos);
  }
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = LossConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace mvcot
