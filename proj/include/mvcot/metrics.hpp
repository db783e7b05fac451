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
#include <span>

#include "mvcot/common.hpp"

namespace mvcot {

// Macro one-vs-rest AUROC from per-class scores [N][K]. Ties get midranks;
// classes without both positives and negatives are skipped.
double auroc_macro(const Matrix& scores, std::span<const int> labels);

// One-vs-rest AUROC of a single score column; NaN if undefined.
double auroc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive);

// Mutual information over the arithmetic mean of the two entropies (natural log).
double nmi(std::span<const int> pred, std::span<const int> truth);

// NMI between k-means (k = classes) on `emb` and the ground-truth labels.
double clustering_nmi(const Matrix& emb, std::span<const int> labels, int classes, std::uint64_t seed);

}  // namespace mvcot
