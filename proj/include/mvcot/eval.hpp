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

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvcot/common.hpp"
#include "mvcot/dataset.hpp"
#include "mvcot/metrics.hpp"
#include "mvcot/training.hpp"

namespace mvcot {

struct ClassMetrics {
  int label = 0;
  std::size_t support = 0;
  double recall = 0.0;
  double auroc = 0.0;  // NaN when undefined on the test set
};

struct EvalReport {
  double accuracy = 0.0;
  double auroc = 0.0;
  double nmi = 0.0;
  double regularization = 0.0;
  std::vector<ClassMetrics> per_class;
};

void to_json(nlohmann::json& j, const EvalReport& r);

struct ProbeOptions {
  std::vector<double> regularization_grid{1e-4, 1e-3, 1e-2, 1e-1};
  double validation_fraction = 0.2;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-5;
};

// Multinomial logistic regression on frozen embeddings. The L2 strength is
// picked on a stratified validation split of the training rows, then the
// model is refit on all training rows and scored on the test rows.
EvalReport linear_probe(const Matrix& train_emb, std::span<const int> train_labels, const Matrix& test_emb,
                        std::span<const int> test_labels, std::uint64_t seed, const ProbeOptions& options = {});

struct SoftmaxModel {
  Matrix weight;  // [features][classes]
  RowVector bias;
  RowVector center;
  double scale = 1.0;
  int iterations = 0;
  double gradient_norm = 0.0;

  Matrix probabilities(const Matrix& emb) const;
};

SoftmaxModel fit_softmax(const Matrix& emb, std::span<const int> labels, int classes, double l2,
                         int max_iterations = 2000, double tolerance = 1e-5);

enum class AblationVariant { T, F, TplusF, full };

std::string to_string(AblationVariant v);
AblationVariant variant_from_string(const std::string& s);

// Training configuration realizing a variant: single-view runs for T and F,
// both views with lambda = 0 for T+F, unchanged for full.
TrainConfig config_for_variant(TrainConfig config, AblationVariant v);

// Dropout-off embeddings; [N][2D] for full and T+F, [N][D] for T or F.
Matrix extract_embeddings(const TrainState& state, const TwoViewData& data,
                          AblationVariant variant = AblationVariant::full);

struct ExperimentSpec {
  TrainConfig config;
  AblationVariant variant = AblationVariant::full;
  std::optional<NoiseSpec> noise;
  bool corrupt_train = true;
  bool corrupt_test = true;
  std::optional<double> labeled_fraction;  // semi-supervised when set
};

struct ExperimentResult {
  EvalReport report;
  TrainResult training;
};

// Standardize -> (corrupt) -> build views -> train -> probe.
ExperimentResult run_experiment(const TimeSeriesDataset& train_raw, const TimeSeriesDataset& test_raw,
                                const ExperimentSpec& spec);

struct SweepRow {
  NoiseKind kind = NoiseKind::missing;
  double level = 0.0;
  std::uint64_t seed = 0;
  AblationVariant variant = AblationVariant::full;
  EvalReport report;
};

struct AblationRow {
  AblationVariant variant = AblationVariant::full;
  std::uint64_t seed = 0;
  EvalReport report;
};

inline constexpr double kTestFraction = 0.2;

struct NoiseTargets {
  bool train = true;
  bool test = true;
};

// Train/test split of `base` per seed; by default both halves are corrupted at each level.
std::vector<SweepRow> robustness_sweep(const TimeSeriesDataset& base, std::span<const NoiseSpec> levels,
                                       const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                       AblationVariant variant = AblationVariant::full,
                                       const std::function<void(const SweepRow&)>& on_row = {},
                                       NoiseTargets targets = {});

std::vector<AblationRow> run_ablation(const TimeSeriesDataset& base, std::span<const AblationVariant> variants,
                                      const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                      const std::function<void(const AblationRow&)>& on_row = {});

inline constexpr int kReportSchemaVersion = 1;

void write_sweep_header(std::ostream& out);
void write_sweep_row(std::ostream& out, const SweepRow& row);
void write_ablation_header(std::ostream& out);
void write_ablation_row(std::ostream& out, const AblationRow& row);

}  // namespace mvcot
