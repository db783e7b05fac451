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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvcot/common.hpp"

namespace mvcot {

// Dense [n][length][channels] float tensor, row-major.
struct SeriesTensor {
  std::size_t n = 0;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<float> values;

  SeriesTensor() = default;
  SeriesTensor(std::size_t n_, std::size_t length_, std::size_t channels_)
      : n(n_), length(length_), channels(channels_), values(n_ * length_ * channels_, 0.0f) {}

  std::size_t sample_size() const { return length * channels; }
  float& at(std::size_t i, std::size_t t, std::size_t c) {
    return values[(i * length + t) * channels + c];
  }
  float at(std::size_t i, std::size_t t, std::size_t c) const {
    return values[(i * length + t) * channels + c];
  }
  std::span<const float> sample(std::size_t i) const {
    return {values.data() + i * sample_size(), sample_size()};
  }
  SeriesTensor gather(std::span<const std::size_t> indices) const;

  bool operator==(const SeriesTensor&) const = default;
};

struct TimeSeriesDataset {
  SeriesTensor samples;
  std::optional<std::vector<int>> labels;
  std::optional<int> class_count;
  std::string name;

  std::size_t size() const { return samples.n; }
  bool has_labels() const { return labels.has_value(); }
  // Throws DataError if any invariant is broken.
  void validate() const;
  TimeSeriesDataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const TimeSeriesDataset&) const = default;
};

// Magnitude spectra, [n][floor(T/2)+1][d].
struct FrequencyView {
  SeriesTensor spectra;
};

// Per-channel z-score statistics.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

enum class NoiseKind { missing, gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::missing;
  double level = 0.0;  // missing ratio in [0,1], or sigma >= 0 in per-channel std units
  std::uint64_t seed = 0;
};

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& s);

// Indices into a training set whose labels may be used for prototype seeding.
struct LabeledSubset {
  std::vector<std::size_t> indices;
};

// TSD container (see README). CSV files ("label,v1,...,vT") are accepted
// when the extension is .csv.
TimeSeriesDataset load_dataset(const std::filesystem::path& path);
void write_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& path);
TimeSeriesDataset load_csv(const std::filesystem::path& path);

// Class c: sinusoid of amplitude 0.2 at DFT bin c+2 with random phase, plus a
// linear trend of slope 0.5 * (2c/(k-1) - 1) over [-1, 1], plus N(0, 0.3^2) noise.
TimeSeriesDataset generate_synthetic(int n_per_class, int t, int d, int k, std::uint64_t seed);

inline constexpr double kMinStddev = 1e-8;

ChannelStats fit_channel_stats(const SeriesTensor& x);
void apply_channel_stats(SeriesTensor& x, const ChannelStats& stats);

struct StandardizedSets {
  TimeSeriesDataset train;
  std::vector<TimeSeriesDataset> others;
  ChannelStats stats;
};

// Z-scores every dataset with the training set's per-channel statistics.
StandardizedSets standardize(const TimeSeriesDataset& train,
                             std::span<const TimeSeriesDataset> others = {});

FrequencyView compute_frequency_view(const TimeSeriesDataset& ds, bool log_magnitude = false);
SeriesTensor magnitude_spectrum(const SeriesTensor& x, bool log_magnitude = false);

TimeSeriesDataset inject_noise(const TimeSeriesDataset& ds, const NoiseSpec& spec);

// Disjoint partition of 0..labels.size()-1, stratified by label, each part sorted.
std::vector<std::vector<std::size_t>> stratified_partition(std::span<const int> labels, std::span<const double> fractions,
                                                           std::uint64_t seed);

// Stratified (when labelled) disjoint partition of 0..n-1.
std::vector<std::vector<std::size_t>> split_indices(const TimeSeriesDataset& ds,
                                                    std::span<const double> fractions,
                                                    std::uint64_t seed);
std::vector<TimeSeriesDataset> split(const TimeSeriesDataset& ds, std::span<const double> fractions,
                                     std::uint64_t seed);
LabeledSubset label_subset(const TimeSeriesDataset& ds, double fraction, std::uint64_t seed);

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t shuffle_seed);

}  // namespace mvcot
