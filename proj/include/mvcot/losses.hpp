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
#include <string>
#include <vector>

#include "mvcot/common.hpp"

namespace mvcot {

struct LossConfig {
  double tau = 0.1;        // instance-loss temperature
  double lambda = 1.0;     // weight of the co-training terms
  double tau_proto = 1.0;  // co-training temperature
  // Adds the positive pair to the instance-loss denominator (NT-Xent style).
  bool ntxent = false;

  void validate() const;
};

struct LossBreakdown {
  double inst_h = 0.0;
  double inst_g = 0.0;
  double cot_h = 0.0;
  double cot_g = 0.0;
  double total = 0.0;
};

// Cosine similarity; throws NumericError("degenerate embedding") for near-zero norms.
double sim(std::span<const double> u, std::span<const double> v);

// Returns a row-normalized copy; throws on near-zero rows.
Matrix l2_normalize_rows(const Matrix& m);

struct InstanceLoss {
  double value = 0.0;
  Matrix grad_clean;
  Matrix grad_augmented;
};

// -sum_i log( exp(sim(z_i, z'_i)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) ).
InstanceLoss instance_loss(const Matrix& clean, const Matrix& augmented, double tau, bool ntxent = false);

struct CotLoss {
  double value = 0.0;
  Matrix grad;  // w.r.t. the embeddings only; prototypes are constants
};

// -sum_i log( exp(sim(e_i, P[sel_i])/t) / sum_{j valid} exp(sim(e_i, P_j)/t) ).
CotLoss cot_loss(const Matrix& emb, std::span<const int> selected, const Matrix& cross_prototypes,
                 std::span<const std::uint8_t> valid_mask, double tau_proto);

// total = inst_h + inst_g + lambda * (cot_h + cot_g); throws on a non-finite part.
LossBreakdown total_loss(double inst_h, double inst_g, double cot_h, double cot_g, double lambda);

}  // namespace mvcot
