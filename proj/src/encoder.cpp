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

#include "mvcot/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mvcot {
namespace {

// im2col with "same" zero padding: row s*L+t holds the kernel window around t.
Matrix im2col(const Matrix& x, std::size_t sequences, std::size_t length, int kernel) {
  const Eigen::Index cin = x.cols();
  const int pad_left = (kernel - 1) / 2;
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(sequences * length), kernel * cin);
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t t = 0; t < length; ++t) {
      const auto row = static_cast<Eigen::Index>(s * length + t);
      for (int k = 0; k < kernel; ++k) {
        const auto src = static_cast<std::ptrdiff_t>(t) + k - pad_left;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        cols.row(row).segment(k * cin, cin) = x.row(static_cast<Eigen::Index>(s * length) + src);
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& dcols, std::size_t sequences, std::size_t length, int kernel, Eigen::Index cin) {
  const int pad_left = (kernel - 1) / 2;
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(sequences * length), cin);
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t t = 0; t < length; ++t) {
      const auto row = static_cast<Eigen::Index>(s * length + t);
      for (int k = 0; k < kernel; ++k) {
        const auto src = static_cast<std::ptrdiff_t>(t) + k - pad_left;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        dx.row(static_cast<Eigen::Index>(s * length) + src) += dcols.row(row).segment(k * cin, cin);
      }
    }
  }
  return dx;
}

// Folds [B*L][d] into [(B*d)*L][1] so each channel becomes its own sequence.
Matrix fold_channels(const SequenceBatch& batch) {
  const auto d = static_cast<std::size_t>(batch.data.cols());
  Matrix out(static_cast<Eigen::Index>(batch.batch * d * batch.length), 1);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < batch.length; ++t)
        out(static_cast<Eigen::Index>((b * d + c) * batch.length + t), 0) =
            batch.data(static_cast<Eigen::Index>(b * batch.length + t), static_cast<Eigen::Index>(c));
  return out;
}

void check_finite(const Matrix& m, const std::string& name) {
  if (!m.allFinite()) throw NumericError("non-finite gradient in " + name);
}

}  // namespace

void EncoderConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("encoder: levels must be >= 1");
  if (static_cast<int>(channels_per_level.size()) != levels)
    throw std::invalid_argument("encoder: channels_per_level must have one entry per level");
  for (int c : channels_per_level)
    if (c < 1) throw std::invalid_argument("encoder: channel counts must be >= 1");
  if (kernel_size < 1) throw std::invalid_argument("encoder: kernel_size must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("encoder: dropout_rate must be in [0, 1)");
  if (embedding_dim < 2) throw std::invalid_argument("encoder: embedding_dim must be >= 2");
  if (input_channels < 1) throw std::invalid_argument("encoder: input_channels must be >= 1");
  if (channel_shared && input_channels != 1)
    throw std::invalid_argument("encoder: channel_shared mode requires input_channels == 1");
}

std::vector<std::pair<std::string, Matrix*>> EncoderParams::named_arrays() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t l = 0; l < conv_weight.size(); ++l) {
    out.emplace_back("conv" + std::to_string(l) + ".weight", &conv_weight[l]);
    out.emplace_back("conv" + std::to_string(l) + ".bias", &conv_bias[l]);
  }
  out.emplace_back("proj.weight", &proj_weight);
  out.emplace_back("proj.bias", &proj_bias);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> EncoderParams::named_arrays() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<EncoderParams*>(this)->named_arrays()) out.emplace_back(name, m);
  return out;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  for (auto& [name, m] : z.named_arrays()) m->setZero();
  return z;
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  int cin = config.input_channels;
  auto he_uniform = [](Matrix& w, int fan_in, std::uint64_t s) {
    std::mt19937_64 rng(s);
    const double bound = std::sqrt(6.0 / fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  };
  for (int l = 0; l < config.levels; ++l) {
    const int cout = config.channels_per_level[l];
    Matrix w(config.kernel_size * cin, cout);
    he_uniform(w, config.kernel_size * cin, derive_seed(seed, {0xC0DE, static_cast<std::uint64_t>(l)}));
    p.conv_weight.push_back(std::move(w));
    p.conv_bias.push_back(Matrix::Zero(1, cout));
    cin = cout;
  }
  p.proj_weight.resize(cin, config.embedding_dim);
  he_uniform(p.proj_weight, cin, derive_seed(seed, {0x960}));
  p.proj_bias = Matrix::Zero(1, config.embedding_dim);
  return p;
}

SequenceBatch make_batch(const SeriesTensor& x, std::span<const std::size_t> indices) {
  SequenceBatch b;
  b.batch = indices.size();
  b.length = x.length;
  b.data.resize(static_cast<Eigen::Index>(b.batch * x.length), static_cast<Eigen::Index>(x.channels));
  const std::size_t s = x.sample_size();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const float* src = x.values.data() + indices[r] * s;
    double* dst = b.data.data() + r * s;
    for (std::size_t k = 0; k < s; ++k) dst[k] = src[k];
  }
  return b;
}

SequenceBatch make_batch(const SeriesTensor& x) {
  std::vector<std::size_t> all(x.n);
  for (std::size_t i = 0; i < x.n; ++i) all[i] = i;
  return make_batch(x, all);
}

Matrix forward(const EncoderParams& params, const SequenceBatch& batch, DropoutMode dropout, ForwardCache* cache) {
  const auto& cfg = params.config;
  if (batch.length < static_cast<std::size_t>(cfg.kernel_size))
    throw std::invalid_argument("encoder: series length " + std::to_string(batch.length) + " shorter than kernel size " +
                                std::to_string(cfg.kernel_size));
  std::size_t groups = 1;
  Matrix x;
  if (cfg.channel_shared) {
    groups = static_cast<std::size_t>(batch.data.cols());
    x = fold_channels(batch);
  } else {
    if (batch.data.cols() != cfg.input_channels)
      throw std::invalid_argument("encoder: expected " + std::to_string(cfg.input_channels) + " input channels, got " +
                                  std::to_string(batch.data.cols()));
    x = batch.data;
  }
  const std::size_t sequences = batch.batch * groups;
  std::size_t length = batch.length;
  const bool drop = dropout.enabled && cfg.dropout_rate > 0.0;
  const double keep_scale = 1.0 / (1.0 - cfg.dropout_rate);

  if (cache) {
    cache->batch = batch.batch;
    cache->groups = groups;
    cache->levels.assign(cfg.levels, {});
  }
  for (int l = 0; l < cfg.levels; ++l) {
    const std::size_t pooled = length / 2;
    if (pooled == 0)
      throw std::invalid_argument("encoder: level " + std::to_string(l) + " input length " + std::to_string(length) +
                                  " is too short to pool");
    Matrix cols = im2col(x, sequences, length, cfg.kernel_size);
    Matrix z = cols * params.conv_weight[l];
    z.rowwise() += params.conv_bias[l].row(0);
    const Eigen::Index c = z.cols();
    Matrix out(static_cast<Eigen::Index>(sequences * pooled), c);
    std::vector<std::uint8_t> arg(static_cast<std::size_t>(out.size()));
    for (std::size_t s = 0; s < sequences; ++s) {
      for (std::size_t u = 0; u < pooled; ++u) {
        const auto r0 = static_cast<Eigen::Index>(s * length + 2 * u);
        const auto ro = static_cast<Eigen::Index>(s * pooled + u);
        for (Eigen::Index k = 0; k < c; ++k) {
          const double a = std::max(z(r0, k), 0.0);
          const double b = std::max(z(r0 + 1, k), 0.0);
          const bool second = b > a;
          out(ro, k) = second ? b : a;
          arg[static_cast<std::size_t>(ro * c + k)] = second ? 1 : 0;
        }
      }
    }
    Matrix mask;
    if (drop) {
      mask.resize(out.rows(), out.cols());
      std::mt19937_64 rng(derive_seed(dropout.seed, {static_cast<std::uint64_t>(l)}));
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = uniform01(rng) < cfg.dropout_rate ? 0.0 : keep_scale;
      out.array() *= mask.array();
    }
    if (cache) {
      auto& lv = cache->levels[l];
      lv.length_in = length;
      lv.columns = std::move(cols);
      lv.preactivation = std::move(z);
      lv.pool_arg = std::move(arg);
      lv.mask = std::move(mask);
    }
    x = std::move(out);
    length = pooled;
  }

  // Global max over time.
  const Eigen::Index c = x.cols();
  Matrix readout(static_cast<Eigen::Index>(sequences), c);
  std::vector<std::int32_t> readout_arg(static_cast<std::size_t>(sequences * c));
  for (std::size_t s = 0; s < sequences; ++s) {
    for (Eigen::Index k = 0; k < c; ++k) {
      std::size_t best = 0;
      double v = x(static_cast<Eigen::Index>(s * length), k);
      for (std::size_t t = 1; t < length; ++t) {
        const double w = x(static_cast<Eigen::Index>(s * length + t), k);
        if (w > v) {
          v = w;
          best = t;
        }
      }
      readout(static_cast<Eigen::Index>(s), k) = v;
      readout_arg[s * c + k] = static_cast<std::int32_t>(best);
    }
  }
  std::vector<std::int32_t> group_arg;
  if (groups > 1) {
    Matrix pooled(static_cast<Eigen::Index>(batch.batch), c);
    group_arg.resize(batch.batch * c);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (Eigen::Index k = 0; k < c; ++k) {
        std::size_t best = 0;
        double v = readout(static_cast<Eigen::Index>(b * groups), k);
        for (std::size_t g = 1; g < groups; ++g) {
          const double w = readout(static_cast<Eigen::Index>(b * groups + g), k);
          if (w > v) {
            v = w;
            best = g;
          }
        }
        pooled(static_cast<Eigen::Index>(b), k) = v;
        group_arg[b * c + k] = static_cast<std::int32_t>(best);
      }
    }
    readout = std::move(pooled);
  }
  Matrix emb = readout * params.proj_weight;
  emb.rowwise() += params.proj_bias.row(0);
  if (cache) {
    cache->final_length = length;
    cache->readout_arg = std::move(readout_arg);
    cache->group_arg = std::move(group_arg);
    cache->readout = std::move(readout);
  }
  return emb;
}

AugmentedPair forward_augmented(const EncoderParams& params, const SequenceBatch& batch, std::uint64_t seed,
                                ForwardCache* clean_cache, ForwardCache* augmented_cache) {
  AugmentedPair pair;
  pair.clean = forward(params, batch, DropoutMode::off(), clean_cache);
  pair.augmented = forward(params, batch, DropoutMode::on(seed), augmented_cache);
  return pair;
}

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache, const Matrix& upstream) {
  const auto& cfg = params.config;
  if (cache.levels.size() != static_cast<std::size_t>(cfg.levels) || cache.readout.rows() != upstream.rows() ||
      upstream.cols() != cfg.embedding_dim)
    throw std::invalid_argument("encoder backward: shape mismatch between cache and upstream gradient");
  EncoderParams grads;
  grads.config = cfg;
  grads.conv_weight.resize(cfg.levels);
  grads.conv_bias.resize(cfg.levels);

  grads.proj_weight = cache.readout.transpose() * upstream;
  grads.proj_bias = upstream.colwise().sum();
  Matrix d_readout = upstream * params.proj_weight.transpose();

  const std::size_t groups = cache.groups;
  const std::size_t sequences = cache.batch * groups;
  const Eigen::Index c = d_readout.cols();
  if (groups > 1) {
    Matrix unfolded = Matrix::Zero(static_cast<Eigen::Index>(sequences), c);
    for (std::size_t b = 0; b < cache.batch; ++b)
      for (Eigen::Index k = 0; k < c; ++k)
        unfolded(static_cast<Eigen::Index>(b * groups + cache.group_arg[b * c + k]), k) =
            d_readout(static_cast<Eigen::Index>(b), k);
    d_readout = std::move(unfolded);
  }
  std::size_t length = cache.final_length;
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(sequences * length), c);
  for (std::size_t s = 0; s < sequences; ++s)
    for (Eigen::Index k = 0; k < c; ++k)
      dx(static_cast<Eigen::Index>(s * length + cache.readout_arg[s * c + k]), k) = d_readout(static_cast<Eigen::Index>(s), k);

  for (int l = cfg.levels - 1; l >= 0; --l) {
    const auto& lv = cache.levels[l];
    if (lv.mask.size() > 0) dx.array() *= lv.mask.array();
    const std::size_t len_in = lv.length_in;
    const std::size_t pooled = len_in / 2;
    const Eigen::Index ch = lv.preactivation.cols();
    Matrix dz = Matrix::Zero(lv.preactivation.rows(), ch);
    for (std::size_t s = 0; s < sequences; ++s) {
      for (std::size_t u = 0; u < pooled; ++u) {
        const auto ro = static_cast<Eigen::Index>(s * pooled + u);
        for (Eigen::Index k = 0; k < ch; ++k) {
          const auto ri = static_cast<Eigen::Index>(s * len_in + 2 * u + lv.pool_arg[static_cast<std::size_t>(ro * ch + k)]);
          if (lv.preactivation(ri, k) > 0.0) dz(ri, k) = dx(ro, k);
        }
      }
    }
    grads.conv_weight[l] = lv.columns.transpose() * dz;
    grads.conv_bias[l] = dz.colwise().sum();
    if (l > 0) {
      Matrix dcols = dz * params.conv_weight[l].transpose();
      dx = col2im(dcols, sequences, len_in, cfg.kernel_size, params.conv_weight[l].rows() / cfg.kernel_size);
    }
  }
  return grads;
}

void add_in_place(EncoderParams& into, const EncoderParams& other) {
  auto dst = into.named_arrays();
  auto src = other.named_arrays();
  if (dst.size() != src.size()) throw std::invalid_argument("add_in_place: parameter trees differ");
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second += *src[i].second;
}

OptimizerState make_optimizer(const EncoderParams& params, double lr) {
  OptimizerState st;
  st.lr = lr;
  st.first_moment = params.zeros_like();
  st.second_moment = params.zeros_like();
  return st;
}

void optimizer_step(OptimizerState& state, EncoderParams& params, const EncoderParams& grads) {
  auto p = params.named_arrays();
  auto g = grads.named_arrays();
  auto m = state.first_moment.named_arrays();
  auto v = state.second_moment.named_arrays();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw std::invalid_argument("optimizer_step: parameter trees differ");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].second->rows() != p[i].second->rows() || g[i].second->cols() != p[i].second->cols())
      throw std::invalid_argument("optimizer_step: shape mismatch in " + p[i].first);
    check_finite(*g[i].second, p[i].first);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto ga = g[i].second->array();
    auto ma = m[i].second->array();
    auto va = v[i].second->array();
    ma = state.beta1 * ma + (1.0 - state.beta1) * ga;
    va = state.beta2 * va + (1.0 - state.beta2) * ga.square();
    p[i].second->array() -= state.lr * (ma / bc1) / ((va / bc2).sqrt() + state.eps);
  }
}

Matrix concat_views(const Matrix& h, const Matrix& g) {
  if (h.rows() != g.rows()) throw std::invalid_argument("concat_views: row count mismatch");
  Matrix out(h.rows(), h.cols() + g.cols());
  out << h, g;
  return out;
}

}  // namespace mvcot
