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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvcot/common.hpp"
#include "mvcot/dataset.hpp"

namespace mvcot {

struct EncoderConfig {
  int levels = 3;
  std::vector<int> channels_per_level{32, 64, 128};
  int kernel_size = 5;
  double dropout_rate = 0.1;
  int embedding_dim = 64;
  int input_channels = 1;
  // Channel-shared mode runs every input channel through the same univariate
  // encoder and max-pools the readouts across channels.
  bool channel_shared = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Weights of one view encoder. Gradients and optimizer moments reuse this type.
struct EncoderParams {
  EncoderConfig config;
  std::vector<Matrix> conv_weight;  // per level, [kernel * in_channels][out_channels]
  std::vector<Matrix> conv_bias;    // per level, [1][out_channels]
  Matrix proj_weight;               // [last_channels][embedding_dim]
  Matrix proj_bias;                 // [1][embedding_dim]

  std::vector<std::pair<std::string, Matrix*>> named_arrays();
  std::vector<std::pair<std::string, const Matrix*>> named_arrays() const;
  EncoderParams zeros_like() const;
  bool empty() const { return conv_weight.empty(); }
};

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Rows are (sequence, time) pairs: row s * length + t holds the channel vector.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  Matrix data;
};

SequenceBatch make_batch(const SeriesTensor& x, std::span<const std::size_t> indices);
SequenceBatch make_batch(const SeriesTensor& x);

struct DropoutMode {
  bool enabled = false;
  std::uint64_t seed = 0;

  static DropoutMode off() { return {}; }
  static DropoutMode on(std::uint64_t seed) { return {true, seed}; }
};

// Activations saved by forward() for backward().
struct ForwardCache {
  struct Level {
    std::size_t length_in = 0;
    Matrix columns;                      // im2col of the level input
    Matrix preactivation;                // conv output before ReLU
    std::vector<std::uint8_t> pool_arg;  // 0/1 offset of the pooled maximum
    Matrix mask;                         // inverted-dropout multipliers; empty when off
  };
  std::size_t batch = 0;
  std::size_t groups = 1;  // channels folded into the batch in channel-shared mode
  std::vector<Level> levels;
  std::size_t final_length = 0;
  std::vector<std::int32_t> readout_arg;  // time index of the global maximum
  std::vector<std::int32_t> group_arg;    // channel index of the cross-channel maximum
  Matrix readout;                         // [batch][last_channels]
};

Matrix forward(const EncoderParams& params, const SequenceBatch& batch, DropoutMode dropout,
               ForwardCache* cache = nullptr);

struct AugmentedPair {
  Matrix clean;
  Matrix augmented;
};

AugmentedPair forward_augmented(const EncoderParams& params, const SequenceBatch& batch, std::uint64_t seed,
                                ForwardCache* clean_cache = nullptr, ForwardCache* augmented_cache = nullptr);

// Gradients of sum(upstream .* forward(...)) w.r.t. every parameter.
EncoderParams backward(const EncoderParams& params, const ForwardCache& cache, const Matrix& upstream);

void add_in_place(EncoderParams& into, const EncoderParams& other);

struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  EncoderParams first_moment;
  EncoderParams second_moment;
};

OptimizerState make_optimizer(const EncoderParams& params, double lr = 1e-3);

// Bias-corrected Adam update. Throws NumericError on a non-finite gradient.
void optimizer_step(OptimizerState& state, EncoderParams& params, const EncoderParams& grads);

Matrix concat_views(const Matrix& h, const Matrix& g);

}  // namespace mvcot
