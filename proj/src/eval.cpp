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

#include "mvcot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>

#include <Eigen/Eigenvalues>

namespace mvcot {
namespace {

constexpr std::uint64_t kNoiseTrainTag = 0x10;
constexpr std::uint64_t kNoiseTestTag = 0x11;
constexpr std::uint64_t kLabelSubsetTag = 0x12;
constexpr std::uint64_t kProbeNmiTag = 0x13;

std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k)
      if (p(i, k) > p(i, best)) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& pred, std::span<const int> truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

std::vector<int> labels_of(std::span<const int> labels, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]];
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class)
    per_class.push_back({{"label", c.label}, {"support", c.support}, {"recall", num(c.recall)}, {"auroc", num(c.auroc)}});
  j = {{"schema_version", kReportSchemaVersion},
       {"accuracy", num(r.accuracy)},
       {"auroc", num(r.auroc)},
       {"nmi", num(r.nmi)},
       {"regularization", r.regularization},
       {"per_class", per_class}};
}

Matrix SoftmaxModel::probabilities(const Matrix& emb) const {
  Matrix x = emb;
  x.rowwise() -= center;
  x /= scale;
  Matrix logits = x * weight;
  logits.rowwise() += bias;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

SoftmaxModel fit_softmax(const Matrix& emb, std::span<const int> labels, int classes, double l2, int max_iterations,
                         double tolerance) {
  const Eigen::Index n = emb.rows();
  const Eigen::Index p = emb.cols();
  if (n < 1 || static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("fit_softmax: bad shapes");
  SoftmaxModel model;
  model.center = emb.colwise().mean();
  Matrix x = emb;
  x.rowwise() -= model.center;
  // A single global scale keeps the fit equivariant under rotations.
  const double rms = std::sqrt(x.squaredNorm() / static_cast<double>(n * std::max<Eigen::Index>(p, 1)));
  model.scale = rms > 1e-12 ? rms : 1.0;
  x /= model.scale;

  Matrix onehot = Matrix::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[i]) = 1.0;

  // Step 1/L with L bounding the Hessian: 0.5 * lambda_max([X 1]^T [X 1]) / n + l2.
  Matrix aug(n, p + 1);
  aug << x, Matrix::Ones(n, 1);
  const Matrix gram = aug.transpose() * aug;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = 0.5 * eig.eigenvalues().maxCoeff() / static_cast<double>(n) + l2;
  const double step = 1.0 / std::max(lipschitz, 1e-12);

  model.weight = Matrix::Zero(p, classes);
  model.bias = RowVector::Zero(classes);
  Matrix probs(n, classes);
  for (int it = 0; it < max_iterations; ++it) {
    probs = x * model.weight;
    probs.rowwise() += model.bias;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - m).exp().matrix();
      probs.row(i) /= probs.row(i).sum();
    }
    const Matrix g = (probs - onehot) / static_cast<double>(n);
    const Matrix gw = x.transpose() * g + l2 * model.weight;
    const RowVector gb = g.colwise().sum();
    model.gradient_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    model.iterations = it;
    if (model.gradient_norm < tolerance) break;
    model.weight -= step * gw;
    model.bias -= step * gb;
    model.iterations = it + 1;
  }
  return model;
}

EvalReport linear_probe(const Matrix& train_emb, std::span<const int> train_labels, const Matrix& test_emb,
                        std::span<const int> test_labels, std::uint64_t seed, const ProbeOptions& options) {
  if (static_cast<Eigen::Index>(train_labels.size()) != train_emb.rows() ||
      static_cast<Eigen::Index>(test_labels.size()) != test_emb.rows())
    throw std::invalid_argument("linear_probe: one label per embedding row required");
  if (train_emb.cols() != test_emb.cols()) throw std::invalid_argument("linear_probe: train/test widths differ");
  if (options.regularization_grid.empty()) throw std::invalid_argument("linear_probe: empty regularization grid");
  int classes = 0;
  for (int y : train_labels) {
    if (y < 0) throw DataError("linear_probe: negative label");
    classes = std::max(classes, y + 1);
  }
  for (int y : test_labels) {
    if (y < 0) throw DataError("linear_probe: negative label");
    classes = std::max(classes, y + 1);
  }
  std::vector<std::size_t> support(static_cast<std::size_t>(classes), 0);
  for (int y : train_labels) ++support[y];
  for (int c = 0; c < classes; ++c)
    if (support[c] == 0)
      throw DataError("linear_probe: degenerate class distribution (class " + std::to_string(c) + " absent from training rows)");
  if (classes < 2) throw DataError("linear_probe: degenerate class distribution (need >= 2 classes)");

  EvalReport report;
  report.regularization = options.regularization_grid.front();
  if (options.regularization_grid.size() > 1) {
    try {
      const double fr[] = {1.0 - options.validation_fraction, options.validation_fraction};
      const auto parts = stratified_partition(train_labels, fr, seed);
      const Matrix fit_x = rows_of(train_emb, parts[0]);
      const auto fit_y = labels_of(train_labels, parts[0]);
      const Matrix val_x = rows_of(train_emb, parts[1]);
      const auto val_y = labels_of(train_labels, parts[1]);
      double best = -1.0;
      for (double reg : options.regularization_grid) {
        const auto m = fit_softmax(fit_x, fit_y, classes, reg, options.max_iterations, options.gradient_tolerance);
        const double acc = accuracy(argmax_rows(m.probabilities(val_x)), val_y);
        if (acc > best) {
          best = acc;
          report.regularization = reg;
        }
      }
    } catch (const std::invalid_argument&) {
      // Too few rows for a validation split; keep the first grid value.
    }
  }
  const auto model =
      fit_softmax(train_emb, train_labels, classes, report.regularization, options.max_iterations, options.gradient_tolerance);
  const Matrix probs = model.probabilities(test_emb);
  const auto pred = argmax_rows(probs);
  report.accuracy = accuracy(pred, test_labels);
  try {
    report.auroc = auroc_macro(probs, test_labels);
  } catch (const std::invalid_argument&) {
    report.auroc = std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<double> column(test_labels.size());
  std::vector<std::uint8_t> positive(test_labels.size());
  for (int c = 0; c < classes; ++c) {
    ClassMetrics cm;
    cm.label = c;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_labels.size(); ++i) {
      column[i] = probs(static_cast<Eigen::Index>(i), c);
      positive[i] = test_labels[i] == c ? 1 : 0;
      if (test_labels[i] == c) {
        ++cm.support;
        hits += pred[i] == c;
      }
    }
    cm.recall = cm.support ? static_cast<double>(hits) / static_cast<double>(cm.support) : std::nan("");
    cm.auroc = auroc_binary(column, positive);
    report.per_class.push_back(cm);
  }
  report.nmi = test_emb.rows() >= classes
                   ? clustering_nmi(test_emb, test_labels, classes, derive_seed(seed, {kProbeNmiTag}))
                   : std::nan("");
  return report;
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::T: return "T";
    case AblationVariant::F: return "F";
    case AblationVariant::TplusF: return "T+F";
    case AblationVariant::full: return "full";
  }
  return "full";
}

AblationVariant variant_from_string(const std::string& s) {
  if (s == "T") return AblationVariant::T;
  if (s == "F") return AblationVariant::F;
  if (s == "T+F" || s == "TplusF") return AblationVariant::TplusF;
  if (s == "full") return AblationVariant::full;
  throw std::invalid_argument("unknown variant '" + s + "' (expected T, F, T+F or full)");
}

TrainConfig config_for_variant(TrainConfig config, AblationVariant v) {
  switch (v) {
    case AblationVariant::T:
      config.views = ViewSelection::time_only;
      config.loss.lambda = 0.0;
      break;
    case AblationVariant::F:
      config.views = ViewSelection::freq_only;
      config.loss.lambda = 0.0;
      break;
    case AblationVariant::TplusF:
      config.views = ViewSelection::both;
      config.loss.lambda = 0.0;
      break;
    case AblationVariant::full:
      break;
  }
  return config;
}

Matrix extract_embeddings(const TrainState& state, const TwoViewData& data, AblationVariant variant) {
  const std::size_t inf = state.config.inference_batch;
  const bool need_h = variant != AblationVariant::F;
  const bool need_g = variant != AblationVariant::T;
  if (need_h && state.encoder_h.empty())
    throw std::invalid_argument("extract_embeddings: variant " + to_string(variant) + " needs the time-view encoder");
  if (need_g && state.encoder_g.empty())
    throw std::invalid_argument("extract_embeddings: variant " + to_string(variant) + " needs the frequency-view encoder");
  if (!need_g) return embed_all(state.encoder_h, data.time, inf);
  if (!need_h) return embed_all(state.encoder_g, data.freq, inf);
  return concat_views(embed_all(state.encoder_h, data.time, inf), embed_all(state.encoder_g, data.freq, inf));
}

ExperimentResult run_experiment(const TimeSeriesDataset& train_raw, const TimeSeriesDataset& test_raw,
                                const ExperimentSpec& spec) {
  if (!train_raw.labels || !test_raw.labels) throw DataError("run_experiment: train and test sets need labels");
  TrainConfig cfg = config_for_variant(spec.config, spec.variant);
  if (cfg.class_count == 0) cfg.class_count = train_raw.class_count.value_or(0);
  std::optional<NoiseSpec> noise_train, noise_test;
  if (spec.noise && spec.corrupt_train) {
    noise_train = *spec.noise;
    noise_train->seed = derive_seed(spec.noise->seed, {kNoiseTrainTag, cfg.seed});
  }
  if (spec.noise && spec.corrupt_test) {
    noise_test = *spec.noise;
    noise_test->seed = derive_seed(spec.noise->seed, {kNoiseTestTag, cfg.seed});
  }
  const auto norm = fit_view_normalization(train_raw, cfg.log_magnitude, noise_train);
  const auto train_data = build_views(train_raw, norm, noise_train);
  const auto test_data = build_views(test_raw, norm, noise_test);

  ExperimentResult out;
  if (spec.labeled_fraction) {
    cfg.mode = TrainMode::semi_supervised;
    cfg.labeled_fraction = *spec.labeled_fraction;
    const auto subset = label_subset(train_raw, *spec.labeled_fraction, derive_seed(cfg.seed, {kLabelSubsetTag}));
    out.training = train_semi_supervised(train_data, subset, cfg, norm);
  } else {
    out.training = train(train_data, cfg, norm);
  }
  const Matrix tr = extract_embeddings(out.training.state, train_data, spec.variant);
  const Matrix te = extract_embeddings(out.training.state, test_data, spec.variant);
  out.report = linear_probe(tr, *train_raw.labels, te, *test_raw.labels, cfg.seed);
  return out;
}

std::vector<SweepRow> robustness_sweep(const TimeSeriesDataset& base, std::span<const NoiseSpec> levels,
                                       const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                       AblationVariant variant, const std::function<void(const SweepRow&)>& on_row,
                                       NoiseTargets targets) {
  const double fr[] = {1.0 - kTestFraction, kTestFraction};
  std::map<std::uint64_t, std::vector<TimeSeriesDataset>> splits;
  for (auto s : seeds) splits[s] = split(base, fr, s);
  std::vector<SweepRow> rows;
  for (const auto& level : levels) {
    for (auto s : seeds) {
      ExperimentSpec spec;
      spec.config = config;
      spec.config.seed = s;
      spec.variant = variant;
      spec.noise = level;
      spec.corrupt_train = targets.train;
      spec.corrupt_test = targets.test;
      SweepRow row;
      row.kind = level.kind;
      row.level = level.level;
      row.seed = s;
      row.variant = variant;
      row.report = run_experiment(splits[s][0], splits[s][1], spec).report;
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const TimeSeriesDataset& base, std::span<const AblationVariant> variants,
                                      const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                      const std::function<void(const AblationRow&)>& on_row) {
  const double fr[] = {1.0 - kTestFraction, kTestFraction};
  std::map<std::uint64_t, std::vector<TimeSeriesDataset>> splits;
  for (auto s : seeds) splits[s] = split(base, fr, s);
  std::vector<AblationRow> rows;
  for (auto v : variants) {
    for (auto s : seeds) {
      ExperimentSpec spec;
      spec.config = config;
      spec.config.seed = s;
      spec.variant = v;
      AblationRow row{v, s, run_experiment(splits[s][0], splits[s][1], spec).report};
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sweep_header(std::ostream& out) {
  out << "schema_version,kind,level,seed,variant,accuracy,auroc,nmi\n";
}

void write_sweep_row(std::ostream& out, const SweepRow& row) {
  out << kReportSchemaVersion << ',' << to_string(row.kind) << ',' << fmt(row.level) << ',' << row.seed << ','
      << to_string(row.variant) << ',' << fmt(row.report.accuracy) << ',' << fmt(row.report.auroc) << ','
      << fmt(row.report.nmi) << '\n';
  out.flush();
}

void write_ablation_header(std::ostream& out) { out << "schema_version,variant,seed,accuracy,auroc,nmi\n"; }

void write_ablation_row(std::ostream& out, const AblationRow& row) {
  out << kReportSchemaVersion << ',' << to_string(row.variant) << ',' << row.seed << ',' << fmt(row.report.accuracy)
      << ',' << fmt(row.report.auroc) << ',' << fmt(row.report.nmi) << '\n';
  out.flush();
}

}  // namespace mvcot
