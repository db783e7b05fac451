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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvcot/common.hpp"
#include "mvcot/dataset.hpp"
#include "mvcot/encoder.hpp"
#include "mvcot/losses.hpp"
#include "mvcot/prototypes.hpp"

namespace mvcot {

enum class TrainMode { unsupervised, semi_supervised };

// Which view encoders exist. Single-view runs are used by the ablations.
enum class ViewSelection { both, time_only, freq_only };

struct TrainConfig {
  std::size_t batch_size = 64;
  int epochs = 20;
  int warmup_epochs = 5;
  LossConfig loss;
  double gamma = 0.01;
  int class_count = 0;              // K; 0 means "take it from the dataset"
  std::vector<int> prototype_ways;  // empty means {K, 2K}
  double lr = 1e-3;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::unsupervised;
  double labeled_fraction = 0.1;
  MovingAverageGrouping ma_grouping = MovingAverageGrouping::cross_view;
  bool renormalize_prototypes = true;
  ViewSelection views = ViewSelection::both;
  EncoderConfig time_encoder;
  EncoderConfig freq_encoder;
  bool log_magnitude = false;
  std::size_t inference_batch = 512;
  bool track_nmi = false;

  void validate() const;
  std::vector<int> resolved_ways(int classes) const;
  bool uses_time() const { return views != ViewSelection::freq_only; }
  bool uses_freq() const { return views != ViewSelection::time_only; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
std::string to_string(TrainMode m);
std::string to_string(ViewSelection v);

// Statistics applied to a raw dataset before it reaches the encoders: the
// time view is z-scored per channel, transformed, and the resulting magnitude
// spectra are z-scored again with their own statistics.
struct ViewNormalization {
  ChannelStats time;
  ChannelStats freq;
  bool log_magnitude = false;
};

struct TwoViewData {
  SeriesTensor time;
  SeriesTensor freq;
  std::optional<std::vector<int>> labels;
  std::optional<int> class_count;

  std::size_t size() const { return time.n; }
};

// `noise`, when given, is injected after time-view standardization.
TwoViewData build_views(const TimeSeriesDataset& raw, const ViewNormalization& norm,
                        const std::optional<NoiseSpec>& noise = std::nullopt);
ViewNormalization fit_view_normalization(const TimeSeriesDataset& raw_train, bool log_magnitude,
                                         const std::optional<NoiseSpec>& noise = std::nullopt);

struct TrainState {
  TrainConfig config;
  ViewNormalization normalization;
  int class_count = 0;
  EncoderParams encoder_h;  // time view; empty when unused
  EncoderParams encoder_g;  // frequency view; empty when unused
  OptimizerState optimizer_h;
  OptimizerState optimizer_g;
  PrototypeBank bank;
  int epoch = 0;  // completed epochs
};

struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "warmup" or "cotrain"
  LossBreakdown mean;
  std::optional<double> nmi;
  double wall_seconds = 0.0;
};

struct TrainObserver {
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(const EpochRecord&, const TrainState&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::vector<BatchRecord> batches;
  std::vector<EpochRecord> epochs;
  std::optional<double> initial_nmi;  // before the first epoch, when tracked from epoch 0
};

// Fresh encoders/optimizers/bank sized for `data`.
TrainState init_train_state(const TwoViewData& data, const TrainConfig& config, const ViewNormalization& norm);

struct BatchObjective {
  LossBreakdown loss;
  EncoderParams grad_h;  // empty when the view is unused
  EncoderParams grad_g;
  Matrix clean_h;  // dropout-off batch embeddings
  Matrix clean_g;
};

// Loss of one mini-batch and its gradients w.r.t. both encoders, with the
// dropout streams of (epoch, batch). Co-training terms need a refreshed bank.
BatchObjective batch_objective(const TrainState& state, const TwoViewData& data, std::span<const std::size_t> idx,
                               int epoch, int batch, bool cotrain);

// Runs epochs state.epoch .. state.config.epochs - 1. A labelled subset turns
// on label-mean prototypes for the way whose size equals the class count.
TrainResult continue_training(TrainState state, const TwoViewData& data, const LabeledSubset* subset = nullptr,
                              const TrainObserver& observer = {});

TrainResult train(const TwoViewData& data, const TrainConfig& config, const ViewNormalization& norm,
                  const TrainObserver& observer = {});
TrainResult train_semi_supervised(const TwoViewData& data, const LabeledSubset& subset, const TrainConfig& config,
                                  const ViewNormalization& norm, const TrainObserver& observer = {});

// Continues unsupervised training of channel-shared encoders on a target
// dataset with any channel count. Throws if the encoders are not channel-shared.
TrainResult finetune_transfer(const TrainState& pretrained, const TwoViewData& target, const TrainConfig& config,
                              const ViewNormalization& target_norm, const TrainObserver& observer = {});

// Dropout-off embeddings of every sample, computed in row order.
Matrix embed_all(const EncoderParams& params, const SeriesTensor& x, std::size_t inference_batch = 512);

inline constexpr const char* kCheckpointMagic = "TSCKPT1";
inline constexpr int kCheckpointSchemaVersion = 1;

void checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState restore(const std::filesystem::path& path);
// Manifest of a checkpoint file, for inspection.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace mvcot
