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
#include <sstream>

#include <gtest/gtest.h>

#include "mvcot/eval.hpp"
#include "test_util.hpp"

namespace mvcot {
namespace {

Matrix gaussian_blobs(int per_class, int classes, int dim, double spread, std::uint64_t seed, std::vector<int>* labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Matrix x(per_class * classes, dim);
  labels->clear();
  for (int i = 0; i < per_class * classes; ++i) {
    const int c = i % classes;
    for (int d = 0; d < dim; ++d) x(i, d) = (d == c ? 3.0 : 0.0) + noise(rng);
    labels->push_back(c);
  }
  return x;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = 2;
  c.warmup_epochs = 1;
  for (auto* e : {&c.time_encoder, &c.freq_encoder}) {
    e->levels = 2;
    e->channels_per_level = {4, 6};
    e->kernel_size = 3;
    e->embedding_dim = 6;
  }
  return c;
}

TEST(LinearProbe, SeparableBlobs) {
  std::vector<int> ytr, yte;
  const Matrix xtr = gaussian_blobs(30, 3, 4, 0.3, 1, &ytr);
  const Matrix xte = gaussian_blobs(10, 3, 4, 0.3, 2, &yte);
  const auto r = linear_probe(xtr, ytr, xte, yte, 0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_NEAR(r.nmi, 1.0, 1e-12);
  ASSERT_EQ(r.per_class.size(), 3u);
  for (const auto& c : r.per_class) {
    EXPECT_EQ(c.support, 10u);
    EXPECT_EQ(c.recall, 1.0);
  }
  bool in_grid = false;
  for (double g : ProbeOptions{}.regularization_grid) in_grid |= g == r.regularization;
  EXPECT_TRUE(in_grid);
}

TEST(LinearProbe, Deterministic) {
  std::vector<int> ytr, yte;
  const Matrix xtr = gaussian_blobs(20, 3, 4, 1.5, 3, &ytr);
  const Matrix xte = gaussian_blobs(10, 3, 4, 1.5, 4, &yte);
  const auto a = linear_probe(xtr, ytr, xte, yte, 7);
  const auto b = linear_probe(xtr, ytr, xte, yte, 7);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.auroc, b.auroc);
  EXPECT_EQ(a.regularization, b.regularization);
}

TEST(LinearProbe, DegenerateClassDistributionIsRejected) {
  const Matrix x = testing::random_matrix(10, 3, 1);
  const std::vector<int> one_class(10, 0);
  EXPECT_THROW(linear_probe(x, one_class, x, one_class, 0), DataError);
  std::vector<int> gap(10, 0);
  gap[0] = 2;
  EXPECT_THROW(linear_probe(x, gap, x, gap, 0), DataError);
}

TEST(Softmax, ReachesStationaryPointOfRegularizedObjective) {
  std::vector<int> y;
  const Matrix x = gaussian_blobs(25, 3, 5, 2.0, 9, &y);
  const double l2 = 1e-2;
  const auto m = fit_softmax(x, y, 3, l2, 20000, 1e-9);
  EXPECT_LT(m.gradient_norm, 1e-9);
  // Independent gradient of mean cross-entropy + l2/2 |W|^2 in the model's scaled coordinates.
  Matrix xs = x;
  xs.rowwise() -= m.center;
  xs /= m.scale;
  Matrix logits = xs * m.weight;
  logits.rowwise() += m.bias;
  Matrix gw = l2 * m.weight;
  RowVector gb = RowVector::Zero(3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    RowVector p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p /= p.sum();
    p(y[i]) -= 1.0;
    gw += xs.row(i).transpose() * p / static_cast<double>(x.rows());
    gb += p / static_cast<double>(x.rows());
  }
  EXPECT_LT(std::sqrt(gw.squaredNorm() + gb.squaredNorm()), 1e-8);
}

TEST(Softmax, RotationEquivariantPredictions) {
  std::vector<int> y;
  const Matrix x = gaussian_blobs(20, 3, 3, 1.0, 5, &y);
  const double c = std::cos(0.7), s = std::sin(0.7);
  Matrix rot(3, 3);
  rot << c, -s, 0, s, c, 0, 0, 0, 1;
  const auto a = fit_softmax(x, y, 3, 1e-3, 5000, 1e-10);
  const auto b = fit_softmax(x * rot, y, 3, 1e-3, 5000, 1e-10);
  EXPECT_LT((a.probabilities(x) - b.probabilities(x * rot)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Variants, StringsAndConfigs) {
  for (auto v : {AblationVariant::T, AblationVariant::F, AblationVariant::TplusF, AblationVariant::full})
    EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_EQ(variant_from_string("TplusF"), AblationVariant::TplusF);
  EXPECT_THROW(variant_from_string("G"), std::invalid_argument);
  TrainConfig base;
  base.loss.lambda = 2.0;
  EXPECT_EQ(config_for_variant(base, AblationVariant::T).views, ViewSelection::time_only);
  EXPECT_EQ(config_for_variant(base, AblationVariant::F).views, ViewSelection::freq_only);
  EXPECT_EQ(config_for_variant(base, AblationVariant::TplusF).loss.lambda, 0.0);
  EXPECT_EQ(config_for_variant(base, AblationVariant::TplusF).views, ViewSelection::both);
  EXPECT_EQ(config_for_variant(base, AblationVariant::full).loss.lambda, 2.0);
}

TEST(Experiment, EmbeddingWidthsFollowVariant) {
  const auto base = generate_synthetic(8, 32, 1, 3, 1);
  const double fr[] = {0.75, 0.25};
  const auto parts = split(base, fr, 0);
  for (auto v : {AblationVariant::T, AblationVariant::F, AblationVariant::full}) {
    ExperimentSpec spec;
    spec.config = tiny_train_config();
    spec.variant = v;
    const auto r = run_experiment(parts[0], parts[1], spec);
    const auto data = build_views(parts[1], r.training.state.normalization);
    const Matrix e = extract_embeddings(r.training.state, data, v);
    EXPECT_EQ(e.cols(), v == AblationVariant::full ? 12 : 6);
    EXPECT_GE(r.report.accuracy, 0.0);
    EXPECT_LE(r.report.accuracy, 1.0);
  }
}

TEST(Experiment, WrongVariantForStateIsRejected) {
  const auto base = generate_synthetic(8, 32, 1, 3, 1);
  ExperimentSpec spec;
  spec.config = tiny_train_config();
  spec.variant = AblationVariant::T;
  const auto r = run_experiment(base, base, spec);
  const auto data = build_views(base, r.training.state.normalization);
  EXPECT_THROW(extract_embeddings(r.training.state, data, AblationVariant::full), std::invalid_argument);
}

TEST(Experiment, SemiSupervisedFromLabeledFraction) {
  const auto base = generate_synthetic(10, 32, 1, 3, 2);
  ExperimentSpec spec;
  spec.config = tiny_train_config();
  spec.labeled_fraction = 0.1;
  const auto r = run_experiment(base, base, spec);
  EXPECT_EQ(r.training.state.config.mode, TrainMode::semi_supervised);
}

TEST(Sweep, RowsStreamInLevelThenSeedOrder) {
  const auto base = generate_synthetic(8, 32, 1, 3, 1);
  const NoiseSpec levels[] = {{NoiseKind::missing, 0.0, 1}, {NoiseKind::missing, 0.5, 1}};
  const std::uint64_t seeds[] = {3, 4};
  std::vector<std::pair<double, std::uint64_t>> seen;
  const auto rows = robustness_sweep(base, levels, tiny_train_config(), seeds, AblationVariant::T,
                                     [&](const SweepRow& r) { seen.emplace_back(r.level, r.seed); });
  ASSERT_EQ(rows.size(), 4u);
  const std::vector<std::pair<double, std::uint64_t>> expected{{0.0, 3}, {0.0, 4}, {0.5, 3}, {0.5, 4}};
  EXPECT_EQ(seen, expected);
  std::ostringstream os;
  write_sweep_header(os);
  for (const auto& r : rows) write_sweep_row(os, r);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "schema_version,kind,level,seed,variant,accuracy,auroc,nmi");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,missing,0,3,T,", 0), 0u) << line;
}

TEST(Sweep, LevelZeroMatchesCleanRunAndTargetsAreHonored) {
  const auto base = generate_synthetic(8, 32, 1, 3, 1);
  const NoiseSpec levels[] = {{NoiseKind::gaussian, 0.0, 1}, {NoiseKind::gaussian, 2.0, 1}};
  const std::uint64_t seeds[] = {5};
  const auto both = robustness_sweep(base, levels, tiny_train_config(), seeds, AblationVariant::T);
  const AblationVariant t[] = {AblationVariant::T};
  const auto clean = run_ablation(base, t, tiny_train_config(), seeds);
  EXPECT_EQ(both[0].report.accuracy, clean[0].report.accuracy);
  EXPECT_EQ(both[0].report.auroc, clean[0].report.auroc);
  const auto test_only = robustness_sweep(base, levels, tiny_train_config(), seeds, AblationVariant::T, {}, {false, true});
  EXPECT_EQ(test_only[0].report.accuracy, clean[0].report.accuracy);
  EXPECT_NE(test_only[1].report.auroc, both[1].report.auroc);
}

TEST(Ablation, OneRowPerVariantAndSeed) {
  const auto base = generate_synthetic(8, 32, 1, 3, 1);
  const AblationVariant variants[] = {AblationVariant::T, AblationVariant::TplusF};
  const std::uint64_t seeds[] = {0};
  const auto rows = run_ablation(base, variants, tiny_train_config(), seeds);
  ASSERT_EQ(rows.size(), 2u);
  std::ostringstream os;
  write_ablation_header(os);
  write_ablation_row(os, rows[1]);
  EXPECT_NE(os.str().find("schema_version,variant,seed,accuracy,auroc,nmi"), std::string::npos);
  EXPECT_NE(os.str().find("1,T+F,0,"), std::string::npos);
}

TEST(Report, JsonHasSchemaAndMetrics) {
  EvalReport r;
  r.accuracy = 0.5;
  r.auroc = std::nan("");
  r.per_class.push_back({0, 3, 1.0, 0.75});
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
  EXPECT_EQ(j.at("accuracy"), 0.5);
  EXPECT_TRUE(j.at("auroc").is_null());
  EXPECT_TRUE(j.contains("nmi"));
  EXPECT_EQ(j.at("per_class")[0].at("support"), 3);
}

}  // namespace
}  // namespace mvcot
