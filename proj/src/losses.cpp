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

#include "mvcot/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvcot {
namespace {

constexpr double kMinNorm = 1e-12;

RowVector row_norms(const Matrix& m) {
  RowVector n(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    n(i) = m.row(i).norm();
    if (!(n(i) > kMinNorm)) throw NumericError("degenerate embedding: row " + std::to_string(i) + " has near-zero norm");
  }
  return n;
}

// Pulls a gradient w.r.t. normalized rows back to the raw rows.
Matrix normalize_backward(const Matrix& normalized, const RowVector& norms, const Matrix& grad_normalized) {
  Matrix out(normalized.rows(), normalized.cols());
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    const double proj = normalized.row(i).dot(grad_normalized.row(i));
    out.row(i) = (grad_normalized.row(i) - proj * normalized.row(i)) / norms(i);
  }
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("loss: tau must be > 0");
  if (!(tau_proto > 0.0)) throw std::invalid_argument("loss: tau_proto must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss: lambda must be >= 0");
}

double sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("sim: dimension mismatch");
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (!(nu > kMinNorm) || !(nv > kMinNorm)) throw NumericError("degenerate embedding");
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

Matrix l2_normalize_rows(const Matrix& m) {
  const RowVector n = row_norms(m);
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) /= n(i);
  return out;
}

InstanceLoss instance_loss(const Matrix& clean, const Matrix& augmented, double tau, bool ntxent) {
  const Eigen::Index b = clean.rows();
  if (b < 2) throw std::invalid_argument("instance loss requires at least 2 samples per batch");
  if (augmented.rows() != b || augmented.cols() != clean.cols())
    throw std::invalid_argument("instance loss: clean and augmented shapes differ");
  if (!(tau > 0.0)) throw std::invalid_argument("instance loss: tau must be > 0");

  const RowVector nz = row_norms(clean);
  const RowVector nzp = row_norms(augmented);
  Matrix z = clean, zp = augmented;
  for (Eigen::Index i = 0; i < b; ++i) {
    z.row(i) /= nz(i);
    zp.row(i) /= nzp(i);
  }
  const Matrix logits = (z * z.transpose()) / tau;
  Matrix prob = Matrix::Zero(b, b);
  Eigen::VectorXd d_pos(b);
  double value = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double pos = z.row(i).dot(zp.row(i)) / tau;
    double m = ntxent ? pos : -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < b; ++k)
      if (k != i) m = std::max(m, logits(i, k));
    double sum = ntxent ? std::exp(pos - m) : 0.0;
    for (Eigen::Index k = 0; k < b; ++k)
      if (k != i) sum += std::exp(logits(i, k) - m);
    const double lse = m + std::log(sum);
    value += lse - pos;
    for (Eigen::Index k = 0; k < b; ++k)
      if (k != i) prob(i, k) = std::exp(logits(i, k) - lse);
    d_pos(i) = -1.0 + (ntxent ? std::exp(pos - lse) : 0.0);
  }
  Matrix dz = (prob * z + prob.transpose() * z) / tau;
  dz += (d_pos.asDiagonal() * zp) / tau;
  const Matrix dzp = (d_pos.asDiagonal() * z) / tau;

  InstanceLoss out;
  out.value = value;
  out.grad_clean = normalize_backward(z, nz, dz);
  out.grad_augmented = normalize_backward(zp, nzp, dzp);
  return out;
}

CotLoss cot_loss(const Matrix& emb, std::span<const int> selected, const Matrix& cross_prototypes,
                 std::span<const std::uint8_t> valid_mask, double tau_proto) {
  const Eigen::Index b = emb.rows();
  const Eigen::Index c = cross_prototypes.rows();
  if (static_cast<Eigen::Index>(selected.size()) != b) throw std::invalid_argument("cot loss: one selection per row required");
  if (static_cast<Eigen::Index>(valid_mask.size()) != c) throw std::invalid_argument("cot loss: mask size mismatch");
  if (cross_prototypes.cols() != emb.cols()) throw std::invalid_argument("cot loss: dimension mismatch");
  if (!(tau_proto > 0.0)) throw std::invalid_argument("cot loss: tau_proto must be > 0");
  std::vector<Eigen::Index> valid;
  for (Eigen::Index j = 0; j < c; ++j)
    if (valid_mask[j]) valid.push_back(j);
  if (valid.empty()) throw std::invalid_argument("cot loss: no valid prototypes");
  for (int s : selected) {
    if (s < 0 || s >= c) throw std::invalid_argument("cot loss: selected prototype index out of range");
    if (!valid_mask[s]) throw std::invalid_argument("cot loss: selected prototype is masked out");
  }

  const RowVector ne = row_norms(emb);
  Matrix e = emb;
  for (Eigen::Index i = 0; i < b; ++i) e.row(i) /= ne(i);
  const Matrix q = l2_normalize_rows(cross_prototypes);
  const Matrix logits = (e * q.transpose()) / tau_proto;

  Matrix dlogits = Matrix::Zero(b, c);
  double value = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (auto j : valid) m = std::max(m, logits(i, j));
    double sum = 0.0;
    for (auto j : valid) sum += std::exp(logits(i, j) - m);
    const double lse = m + std::log(sum);
    value += lse - logits(i, selected[i]);
    for (auto j : valid) dlogits(i, j) = std::exp(logits(i, j) - lse);
    dlogits(i, selected[i]) -= 1.0;
  }
  const Matrix de = (dlogits * q) / tau_proto;
  CotLoss out;
  out.value = value;
  out.grad = normalize_backward(e, ne, de);
  return out;
}

LossBreakdown total_loss(double inst_h, double inst_g, double cot_h, double cot_g, double lambda) {
  const std::pair<const char*, double> parts[] = {{"inst_h", inst_h}, {"inst_g", inst_g}, {"cot_h", cot_h}, {"cot_g", cot_g}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + name);
  LossBreakdown out{inst_h, inst_g, cot_h, cot_g, inst_h + inst_g + lambda * (cot_h + cot_g)};
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss term total");
  return out;
}

}  // namespace mvcot
