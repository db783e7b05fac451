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

#include "mvcot/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mvcot/metrics.hpp"

namespace mvcot {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitTag = 0x1;
constexpr std::uint64_t kShuffleTag = 0x2;
constexpr std::uint64_t kDropoutTag = 0x3;
constexpr std::uint64_t kClusterTag = 0x4;
constexpr std::uint64_t kNmiTag = 0x5;

enum View : std::uint64_t { kTime = 0, kFreq = 1 };

std::string ma_grouping_to_string(MovingAverageGrouping g) { return g == MovingAverageGrouping::cross_view ? "cross_view" : "intra_view"; }

MovingAverageGrouping ma_grouping_from_string(const std::string& s) {
  if (s == "cross_view") return MovingAverageGrouping::cross_view;
  if (s == "intra_view") return MovingAverageGrouping::intra_view;
  throw std::invalid_argument("unknown ma_grouping '" + s + "'");
}

TrainMode mode_from_string(const std::string& s) {
  if (s == "unsupervised") return TrainMode::unsupervised;
  if (s == "semi_supervised" || s == "semi") return TrainMode::semi_supervised;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

ViewSelection views_from_string(const std::string& s) {
  if (s == "both") return ViewSelection::both;
  if (s == "time_only") return ViewSelection::time_only;
  if (s == "freq_only") return ViewSelection::freq_only;
  throw std::invalid_argument("unknown view selection '" + s + "'");
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

std::vector<int> gather(const std::vector<int>& v, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = v[idx[r]];
  return out;
}

// Per-view pieces of one mini-batch step.
struct ViewStep {
  ForwardCache clean_cache;
  ForwardCache augmented_cache;
  AugmentedPair pair;
  InstanceLoss inst;
  Matrix cot_grad;
  double cot = 0.0;
};

void renormalize_rows(Matrix& m, const std::vector<int>& touched) {
  std::vector<char> seen(static_cast<std::size_t>(m.rows()), 0);
  for (int a : touched) {
    if (seen[a]) continue;
    seen[a] = 1;
    const double n = m.row(a).norm();
    if (n > 1e-12) m.row(a) /= n;
  }
}

double epoch_nmi(const TrainState& st, const TwoViewData& data) {
  if (!data.labels) return std::nan("");
  Matrix parts;
  const std::size_t inf = st.config.inference_batch;
  if (!st.encoder_h.empty() && !st.encoder_g.empty()) {
    parts = concat_views(l2_normalize_rows(embed_all(st.encoder_h, data.time, inf)),
                         l2_normalize_rows(embed_all(st.encoder_g, data.freq, inf)));
  } else if (!st.encoder_h.empty()) {
    parts = embed_all(st.encoder_h, data.time, inf);
  } else {
    parts = embed_all(st.encoder_g, data.freq, inf);
  }
  return clustering_nmi(parts, *data.labels, st.class_count,
                        derive_seed(st.config.seed, {kNmiTag, static_cast<std::uint64_t>(st.epoch)}));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("instance loss requires at least 2 samples per batch");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw std::invalid_argument("train: warmup_epochs must be in [0, epochs]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("train: gamma must be in [0, 1]");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (mode == TrainMode::semi_supervised && !(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw std::invalid_argument("train: labeled_fraction must be in (0, 1]");
  if (inference_batch < 1) throw std::invalid_argument("train: inference_batch must be >= 1");
  loss.validate();
}

std::vector<int> TrainConfig::resolved_ways(int classes) const {
  if (!prototype_ways.empty()) return prototype_ways;
  if (classes < 1) throw std::invalid_argument("train: class_count is required to derive prototype ways");
  return {classes, 2 * classes};
}

std::string to_string(TrainMode m) { return m == TrainMode::unsupervised ? "unsupervised" : "semi_supervised"; }

std::string to_string(ViewSelection v) {
  switch (v) {
    case ViewSelection::both: return "both";
    case ViewSelection::time_only: return "time_only";
    case ViewSelection::freq_only: return "freq_only";
  }
  return "both";
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"levels", c.levels},
       {"channels_per_level", c.channels_per_level},
       {"kernel_size", c.kernel_size},
       {"dropout_rate", c.dropout_rate},
       {"embedding_dim", c.embedding_dim},
       {"input_channels", c.input_channels},
       {"channel_shared", c.channel_shared}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read_opt(j, "levels", c.levels);
  read_opt(j, "channels_per_level", c.channels_per_level);
  read_opt(j, "kernel_size", c.kernel_size);
  read_opt(j, "dropout_rate", c.dropout_rate);
  read_opt(j, "embedding_dim", c.embedding_dim);
  read_opt(j, "input_channels", c.input_channels);
  read_opt(j, "channel_shared", c.channel_shared);
  if (j.contains("levels") && !j.contains("channels_per_level") &&
      static_cast<int>(c.channels_per_level.size()) != c.levels)
    throw std::invalid_argument("encoder config: channels_per_level must accompany levels");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"tau", c.loss.tau},
       {"lambda", c.loss.lambda},
       {"tau_proto", c.loss.tau_proto},
       {"ntxent", c.loss.ntxent},
       {"gamma", c.gamma},
       {"class_count", c.class_count},
       {"prototype_ways", c.prototype_ways},
       {"lr", c.lr},
       {"seed", c.seed},
       {"mode", to_string(c.mode)},
       {"labeled_fraction", c.labeled_fraction},
       {"ma_grouping", ma_grouping_to_string(c.ma_grouping)},
       {"renormalize_prototypes", c.renormalize_prototypes},
       {"views", to_string(c.views)},
       {"time_encoder", c.time_encoder},
       {"freq_encoder", c.freq_encoder},
       {"log_magnitude", c.log_magnitude},
       {"inference_batch", c.inference_batch},
       {"track_nmi", c.track_nmi}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "warmup_epochs", c.warmup_epochs);
  read_opt(j, "tau", c.loss.tau);
  read_opt(j, "lambda", c.loss.lambda);
  read_opt(j, "tau_proto", c.loss.tau_proto);
  read_opt(j, "ntxent", c.loss.ntxent);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "class_count", c.class_count);
  read_opt(j, "prototype_ways", c.prototype_ways);
  read_opt(j, "lr", c.lr);
  read_opt(j, "seed", c.seed);
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  read_opt(j, "labeled_fraction", c.labeled_fraction);
  if (j.contains("ma_grouping")) c.ma_grouping = ma_grouping_from_string(j.at("ma_grouping").get<std::string>());
  read_opt(j, "renormalize_prototypes", c.renormalize_prototypes);
  if (j.contains("views")) c.views = views_from_string(j.at("views").get<std::string>());
  if (j.contains("time_encoder")) from_json(j.at("time_encoder"), c.time_encoder);
  if (j.contains("freq_encoder")) from_json(j.at("freq_encoder"), c.freq_encoder);
  read_opt(j, "log_magnitude", c.log_magnitude);
  read_opt(j, "inference_batch", c.inference_batch);
  read_opt(j, "track_nmi", c.track_nmi);
}

ViewNormalization fit_view_normalization(const TimeSeriesDataset& raw_train, bool log_magnitude,
                                         const std::optional<NoiseSpec>& noise) {
  ViewNormalization norm;
  norm.log_magnitude = log_magnitude;
  norm.time = fit_channel_stats(raw_train.samples);
  TimeSeriesDataset z = raw_train;
  apply_channel_stats(z.samples, norm.time);
  if (noise) z = inject_noise(z, *noise);
  norm.freq = fit_channel_stats(magnitude_spectrum(z.samples, log_magnitude));
  return norm;
}

TwoViewData build_views(const TimeSeriesDataset& raw, const ViewNormalization& norm,
                        const std::optional<NoiseSpec>& noise) {
  TimeSeriesDataset z = raw;
  apply_channel_stats(z.samples, norm.time);
  if (noise) z = inject_noise(z, *noise);
  TwoViewData out;
  out.freq = magnitude_spectrum(z.samples, norm.log_magnitude);
  apply_channel_stats(out.freq, norm.freq);
  out.time = std::move(z.samples);
  out.labels = raw.labels;
  out.class_count = raw.class_count;
  return out;
}

Matrix embed_all(const EncoderParams& params, const SeriesTensor& x, std::size_t inference_batch) {
  Matrix out(static_cast<Eigen::Index>(x.n), params.config.embedding_dim);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.n; start += inference_batch) {
    const std::size_t end = std::min(x.n, start + inference_batch);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        forward(params, make_batch(x, idx), DropoutMode::off());
  }
  return out;
}

TrainState init_train_state(const TwoViewData& data, const TrainConfig& config, const ViewNormalization& norm) {
  config.validate();
  TrainState st;
  st.config = config;
  st.normalization = norm;
  st.class_count = config.class_count > 0 ? config.class_count : data.class_count.value_or(0);
  if (config.uses_time()) {
    EncoderConfig ec = config.time_encoder;
    if (!ec.channel_shared) ec.input_channels = static_cast<int>(data.time.channels);
    st.config.time_encoder = ec;
    st.encoder_h = init_encoder(ec, derive_seed(config.seed, {kInitTag, kTime}));
    st.optimizer_h = make_optimizer(st.encoder_h, config.lr);
  }
  if (config.uses_freq()) {
    EncoderConfig ec = config.freq_encoder;
    if (!ec.channel_shared) ec.input_channels = static_cast<int>(data.freq.channels);
    st.config.freq_encoder = ec;
    st.encoder_g = init_encoder(ec, derive_seed(config.seed, {kInitTag, kFreq}));
    st.optimizer_g = make_optimizer(st.encoder_g, config.lr);
  }
  if (config.views == ViewSelection::both && config.loss.lambda > 0.0 && config.warmup_epochs < config.epochs) {
    const auto ways = config.resolved_ways(st.class_count);
    st.bank = PrototypeBank::with_ways(ways);
  }
  return st;
}

BatchObjective batch_objective(const TrainState& state, const TwoViewData& data, std::span<const std::size_t> idx,
                               int epoch, int batch, bool cotrain) {
  const TrainConfig& cfg = state.config;
  const bool use_h = !state.encoder_h.empty();
  const bool use_g = !state.encoder_g.empty();
  if (cotrain && (!use_h || !use_g || state.bank.ways.empty()))
    throw std::logic_error("co-training needs both views and a prototype bank");
  const std::size_t n = data.size();
  const auto e = static_cast<std::uint64_t>(epoch);
  const auto b = static_cast<std::uint64_t>(batch);

  ViewStep sh, sg;
  auto run_view = [&](ViewStep& s, const EncoderParams& p, const SeriesTensor& x, std::uint64_t view) {
    s.pair = forward_augmented(p, make_batch(x, idx), derive_seed(cfg.seed, {kDropoutTag, view, e, b}),
                               &s.clean_cache, &s.augmented_cache);
    s.inst = instance_loss(s.pair.clean, s.pair.augmented, cfg.loss.tau, cfg.loss.ntxent);
  };
  if (use_h) run_view(sh, state.encoder_h, data.time, kTime);
  if (use_g) run_view(sg, state.encoder_g, data.freq, kFreq);

  if (cotrain) {
    sh.cot_grad = Matrix::Zero(sh.pair.clean.rows(), sh.pair.clean.cols());
    sg.cot_grad = Matrix::Zero(sg.pair.clean.rows(), sg.pair.clean.cols());
    for (const auto& way : state.bank.ways) {
      std::vector<int> sel_h(idx.size()), sel_g(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto s = select_cross_prototype(way, idx[r], n);
        sel_h[r] = s.index_h;
        sel_g[r] = s.index_g;
      }
      auto ch = cot_loss(sh.pair.clean, sel_h, way.cross_h, way.valid_h, cfg.loss.tau_proto);
      auto cg = cot_loss(sg.pair.clean, sel_g, way.cross_g, way.valid_g, cfg.loss.tau_proto);
      sh.cot += ch.value;
      sg.cot += cg.value;
      sh.cot_grad += ch.grad;
      sg.cot_grad += cg.grad;
    }
  }
  const double lambda = cotrain ? cfg.loss.lambda : 0.0;
  BatchObjective out;
  out.loss = total_loss(use_h ? sh.inst.value : 0.0, use_g ? sg.inst.value : 0.0, sh.cot, sg.cot, lambda);

  auto grads = [&](ViewStep& s, const EncoderParams& p) {
    Matrix up_clean = s.inst.grad_clean;
    if (cotrain) up_clean += lambda * s.cot_grad;
    EncoderParams g = backward(p, s.clean_cache, up_clean);
    add_in_place(g, backward(p, s.augmented_cache, s.inst.grad_augmented));
    return g;
  };
  if (use_h) {
    out.grad_h = grads(sh, state.encoder_h);
    out.clean_h = std::move(sh.pair.clean);
  }
  if (use_g) {
    out.grad_g = grads(sg, state.encoder_g);
    out.clean_g = std::move(sg.pair.clean);
  }
  return out;
}

TrainResult continue_training(TrainState state, const TwoViewData& data, const LabeledSubset* subset,
                              const TrainObserver& observer) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  const std::size_t n = data.size();
  if (data.freq.n != n) throw DataError("time and frequency views disagree on sample count");
  if (n < 2) throw DataError("training needs at least 2 samples");

  std::vector<int> subset_labels;
  if (subset) {
    if (!data.labels) throw DataError("semi-supervised training requires labels");
    for (std::size_t i : subset->indices)
      if (i >= n) throw DataError("labelled subset index " + std::to_string(i) + " outside the training set");
    subset_labels = gather(*data.labels, subset->indices);
    std::vector<char> present(static_cast<std::size_t>(state.class_count), 0);
    for (int y : subset_labels) {
      if (y < 0 || y >= state.class_count) throw DataError("labelled subset label out of range");
      present[y] = 1;
    }
    for (int c = 0; c < state.class_count; ++c)
      if (!present[c]) throw DataError("class " + std::to_string(c) + " missing from the labelled subset");
  }
  const LabeledRefs refs{subset ? std::span<const std::size_t>(subset->indices) : std::span<const std::size_t>{},
                         subset_labels, state.class_count};

  const bool use_h = !state.encoder_h.empty();
  const bool use_g = !state.encoder_g.empty();
  const bool cotrain_possible = use_h && use_g && cfg.loss.lambda > 0.0 && !state.bank.ways.empty();

  TrainResult result;
  if (cfg.track_nmi && data.labels && state.class_count > 1 && state.epoch == 0)
    result.initial_nmi = epoch_nmi(state, data);
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);
    const bool cotrain = cotrain_possible && epoch >= cfg.warmup_epochs;

    if (cotrain) {
      const Matrix eh = embed_all(state.encoder_h, data.time, cfg.inference_batch);
      const Matrix eg = embed_all(state.encoder_g, data.freq, cfg.inference_batch);
      RefreshMode mode = RefreshMode::moving_avg;
      if (subset) {
        mode = RefreshMode::labeled;
      } else if (!state.bank.ways.front().initialized) {
        mode = RefreshMode::kmeans_init;
      }
      refresh_epoch(state.bank, eh, eg, mode, derive_seed(cfg.seed, {kClusterTag, e}), subset ? &refs : nullptr);
      // The moving average starts from the cross-view prototypes, whose rows are
      // indexed by the other view's assignment like the batch means folded into them.
      if (cfg.ma_grouping == MovingAverageGrouping::cross_view) {
        for (auto& way : state.bank.ways) {
          way.intra_h = way.cross_h;
          way.intra_g = way.cross_g;
          if (cfg.renormalize_prototypes) {
            std::vector<int> all(static_cast<std::size_t>(way.count));
            std::iota(all.begin(), all.end(), 0);
            renormalize_rows(way.intra_h, all);
            renormalize_rows(way.intra_g, all);
          }
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = cotrain ? "cotrain" : "warmup";
    const auto plan = batches(n, cfg.batch_size, derive_seed(cfg.seed, {kShuffleTag, e}));
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      const auto& idx = plan[bi];
      try {
        BatchObjective obj = batch_objective(state, data, idx, epoch, static_cast<int>(bi), cotrain);
        if (use_h) optimizer_step(state.optimizer_h, state.encoder_h, obj.grad_h);
        if (use_g) optimizer_step(state.optimizer_g, state.encoder_g, obj.grad_g);

        if (cotrain && cfg.gamma > 0.0) {
          const Matrix nh = l2_normalize_rows(obj.clean_h);
          const Matrix ng = l2_normalize_rows(obj.clean_g);
          for (auto& way : state.bank.ways) {
            const bool cross = cfg.ma_grouping == MovingAverageGrouping::cross_view;
            const auto group_h = gather(cross ? way.assign_g : way.assign_h, idx);
            const auto group_g = gather(cross ? way.assign_h : way.assign_g, idx);
            moving_average_update(way.intra_h, nh, group_h, cfg.gamma);
            moving_average_update(way.intra_g, ng, group_g, cfg.gamma);
            if (cfg.renormalize_prototypes) {
              renormalize_rows(way.intra_h, group_h);
              renormalize_rows(way.intra_g, group_g);
            }
          }
        }
        BatchRecord br;
        br.epoch = epoch;
        br.batch = static_cast<int>(bi);
        br.loss = obj.loss;
        rec.mean.inst_h += br.loss.inst_h;
        rec.mean.inst_g += br.loss.inst_g;
        rec.mean.cot_h += br.loss.cot_h;
        rec.mean.cot_g += br.loss.cot_g;
        rec.mean.total += br.loss.total;
        if (observer.on_batch) observer.on_batch(br);
        result.batches.push_back(br);
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) + ": " + err.what());
      }
    }
    const double nb = static_cast<double>(plan.size());
    rec.mean.inst_h /= nb;
    rec.mean.inst_g /= nb;
    rec.mean.cot_h /= nb;
    rec.mean.cot_g /= nb;
    rec.mean.total /= nb;
    state.epoch = epoch + 1;
    if (cfg.track_nmi && data.labels && state.class_count > 1) rec.nmi = epoch_nmi(state, data);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (observer.on_epoch) observer.on_epoch(rec, state);
    result.epochs.push_back(rec);
  }
  result.state = std::move(state);
  return result;
}

TrainResult train(const TwoViewData& data, const TrainConfig& config, const ViewNormalization& norm,
                  const TrainObserver& observer) {
  return continue_training(init_train_state(data, config, norm), data, nullptr, observer);
}

TrainResult train_semi_supervised(const TwoViewData& data, const LabeledSubset& subset, const TrainConfig& config,
                                  const ViewNormalization& norm, const TrainObserver& observer) {
  TrainConfig cfg = config;
  cfg.mode = TrainMode::semi_supervised;
  return continue_training(init_train_state(data, cfg, norm), data, &subset, observer);
}

TrainResult finetune_transfer(const TrainState& pretrained, const TwoViewData& target, const TrainConfig& config,
                              const ViewNormalization& target_norm, const TrainObserver& observer) {
  if ((!pretrained.encoder_h.empty() && !pretrained.encoder_h.config.channel_shared) ||
      (!pretrained.encoder_g.empty() && !pretrained.encoder_g.config.channel_shared))
    throw std::invalid_argument("finetune_transfer: pretrained encoders must be channel-shared");
  TrainConfig cfg = config;
  cfg.views = pretrained.config.views;
  cfg.time_encoder = pretrained.config.time_encoder;
  cfg.freq_encoder = pretrained.config.freq_encoder;
  TrainState st = init_train_state(target, cfg, target_norm);
  if (!pretrained.encoder_h.empty()) {
    st.encoder_h = pretrained.encoder_h;
    st.optimizer_h = make_optimizer(st.encoder_h, cfg.lr);
  }
  if (!pretrained.encoder_g.empty()) {
    st.encoder_g = pretrained.encoder_g;
    st.optimizer_g = make_optimizer(st.encoder_g, cfg.lr);
  }
  return continue_training(std::move(st), target, nullptr, observer);
}

}  // namespace mvcot
