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

#include "mvcot/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fftw3.h>

#include "json.hpp"

namespace mvcot {
namespace {

constexpr char kTsdMagic[4] = {'T', 'S', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T header_field(const nlohmann::json& header, const char* key) {
  if (!header.contains(key)) throw DataError(std::string("malformed header: missing field '") + key + "'");
  try {
    return header.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(std::string("malformed header: bad type for field '") + key + "'");
  }
}

TimeSeriesDataset parse_tsd(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kTsdMagic, 4) != 0)
    throw DataError("malformed header: bad magic (expected TSD1)");
  const std::uint32_t header_len = get_u32(bytes.data() + 4);
  if (bytes.size() < 8ull + header_len) throw DataError("malformed header: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed header: ") + e.what());
  }
  const auto n = header_field<std::int64_t>(header, "n");
  const auto t = header_field<std::int64_t>(header, "t");
  const auto d = header_field<std::int64_t>(header, "d");
  const bool has_labels = header_field<bool>(header, "has_labels");
  if (n < 1) throw DataError("malformed header: field 'n' must be >= 1");
  if (t < 2) throw DataError("malformed header: field 't' must be >= 2");
  if (d < 1) throw DataError("malformed header: field 'd' must be >= 1");

  TimeSeriesDataset ds;
  if (header.contains("name") && header["name"].is_string()) ds.name = header["name"].get<std::string>();
  if (header.contains("class_count") && !header["class_count"].is_null()) {
    ds.class_count = header_field<int>(header, "class_count");
    if (*ds.class_count < 1) throw DataError("malformed header: field 'class_count' must be >= 1");
  }
  if (has_labels && !ds.class_count) throw DataError("malformed header: field 'class_count' required with labels");

  const std::size_t count = static_cast<std::size_t>(n * t * d);
  const std::size_t expected = 8 + header_len + count * 4 + (has_labels ? static_cast<std::size_t>(n) * 4 : 0);
  if (bytes.size() != expected) {
    throw DataError("payload size mismatch: expected " + std::to_string(expected - 8 - header_len) +
                    " bytes, found " + std::to_string(bytes.size() - 8 - header_len));
  }
  ds.samples = SeriesTensor(n, t, d);
  const unsigned char* p = bytes.data() + 8 + header_len;
  for (std::size_t i = 0; i < count; ++i, p += 4) ds.samples.values[i] = std::bit_cast<float>(get_u32(p));
  if (has_labels) {
    std::vector<int> labels(n);
    for (auto& l : labels) {
      l = static_cast<int>(std::bit_cast<std::int32_t>(get_u32(p)));
      p += 4;
    }
    ds.labels = std::move(labels);
  }
  ds.validate();
  return ds;
}

std::vector<std::size_t> allocate_counts(std::size_t n, std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t used = 0;
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    const double exact = fractions[j] * static_cast<double>(n);
    counts[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += counts[j];
    remainders.emplace_back(exact - static_cast<double>(counts[j]), j);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n; ++r, ++used) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

std::vector<std::vector<std::size_t>> indices_by_class(const TimeSeriesDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(*ds.class_count));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[(*ds.labels)[i]].push_back(i);
  return by_class;
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

SeriesTensor SeriesTensor::gather(std::span<const std::size_t> indices) const {
  SeriesTensor out(indices.size(), length, channels);
  const std::size_t s = sample_size();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) throw std::out_of_range("sample index " + std::to_string(indices[r]) + " out of range");
    std::copy_n(values.begin() + indices[r] * s, s, out.values.begin() + r * s);
  }
  return out;
}

void TimeSeriesDataset::validate() const {
  if (samples.n < 1) throw DataError("dataset must contain at least one sample");
  if (samples.length < 2) throw DataError("series length must be >= 2");
  if (samples.channels < 1) throw DataError("channel count must be >= 1");
  if (samples.values.size() != samples.n * samples.length * samples.channels)
    throw DataError("payload size mismatch");
  for (std::size_t i = 0; i < samples.values.size(); ++i) {
    if (!std::isfinite(samples.values[i])) throw DataError("non-finite value at flat index " + std::to_string(i));
  }
  if (labels) {
    if (!class_count) throw DataError("labels present but class_count missing");
    if (labels->size() != samples.n) throw DataError("label count does not match sample count");
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const int l = (*labels)[i];
      if (l < 0 || l >= *class_count) {
        throw DataError("label[" + std::to_string(i) + "]=" + std::to_string(l) + " out of range [0, " +
                        std::to_string(*class_count) + ")");
      }
    }
  }
}

TimeSeriesDataset TimeSeriesDataset::subset(std::span<const std::size_t> indices) const {
  TimeSeriesDataset out;
  out.samples = samples.gather(indices);
  out.class_count = class_count;
  out.name = name;
  if (labels) {
    std::vector<int> l(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) l[r] = (*labels)[indices[r]];
    out.labels = std::move(l);
  }
  return out;
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::missing ? "missing" : "gaussian"; }

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "missing") return NoiseKind::missing;
  if (s == "gaussian") return NoiseKind::gaussian;
  throw std::invalid_argument("unknown noise kind '" + s + "' (expected missing|gaussian)");
}

TimeSeriesDataset load_dataset(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kTsdMagic, 4) == 0) return parse_tsd(bytes);
  if (path.extension() == ".csv") return load_csv(path);
  return parse_tsd(bytes);
}

void write_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  nlohmann::json header = {{"n", ds.samples.n},
                           {"t", ds.samples.length},
                           {"d", ds.samples.channels},
                           {"has_labels", ds.has_labels()},
                           {"class_count", ds.class_count ? nlohmann::json(*ds.class_count) : nlohmann::json()},
                           {"name", ds.name}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kTsdMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float v : ds.samples.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (ds.labels) {
    for (int l : *ds.labels) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<std::int32_t>(l)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TimeSeriesDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<int> labels;
  std::vector<float> values;
  std::size_t t = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 3) throw DataError("csv row " + std::to_string(row) + ": need a label and >= 2 values");
    if (t == 0) t = fields.size() - 1;
    if (fields.size() - 1 != t) throw DataError("csv row " + std::to_string(row) + ": inconsistent series length");
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };
    int label = 0;
    auto lf = trim(fields[0]);
    if (std::from_chars(lf.data(), lf.data() + lf.size(), label).ec != std::errc{} || label < 0)
      throw DataError("csv row " + std::to_string(row) + ": bad label '" + std::string(lf) + "'");
    labels.push_back(label);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      auto f = trim(fields[j]);
      float v = 0.0f;
      if (std::from_chars(f.data(), f.data() + f.size(), v).ec != std::errc{})
        throw DataError("csv row " + std::to_string(row) + ": bad value '" + std::string(f) + "'");
      values.push_back(v);
    }
    ++row;
  }
  if (labels.empty()) throw DataError("csv file has no rows");
  TimeSeriesDataset ds;
  ds.samples.n = labels.size();
  ds.samples.length = t;
  ds.samples.channels = 1;
  ds.samples.values = std::move(values);
  ds.class_count = *std::max_element(labels.begin(), labels.end()) + 1;
  ds.labels = std::move(labels);
  ds.name = path.stem().string();
  ds.validate();
  return ds;
}

TimeSeriesDataset generate_synthetic(int n_per_class, int t, int d, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("generate_synthetic: k must be >= 2");
  if (t < 32) throw std::invalid_argument("generate_synthetic: t must be >= 32");
  if (d < 1 || n_per_class < 1) throw std::invalid_argument("generate_synthetic: d and n_per_class must be >= 1");
  if (k + 2 > t / 2) throw std::invalid_argument("generate_synthetic: k too large for series length");

  constexpr double kAmplitude = 0.2;
  constexpr double kSlope = 0.5;
  constexpr double kNoiseSigma = 0.3;
  std::mt19937_64 rng(derive_seed(seed, {0x5EED}));
  std::normal_distribution<double> noise(0.0, kNoiseSigma);

  const std::size_t n = static_cast<std::size_t>(n_per_class) * k;
  TimeSeriesDataset ds;
  ds.samples = SeriesTensor(n, t, d);
  ds.labels = std::vector<int>(n);
  ds.class_count = k;
  ds.name = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(k));
    (*ds.labels)[i] = c;
    const double freq = c + 2;
    const double slope = -1.0 + 2.0 * c / (k - 1);
    for (int ch = 0; ch < d; ++ch) {
      const double phase = 2.0 * std::numbers::pi * uniform01(rng);
      for (int s = 0; s < t; ++s) {
        const double u = static_cast<double>(s) / t;
        const double v = kAmplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase) +
                         kSlope * slope * (2.0 * u - 1.0) + noise(rng);
        ds.samples.at(i, s, ch) = static_cast<float>(v);
      }
    }
  }
  return ds;
}

ChannelStats fit_channel_stats(const SeriesTensor& x) {
  ChannelStats stats;
  stats.mean.assign(x.channels, 0.0);
  stats.stddev.assign(x.channels, 0.0);
  const double count = static_cast<double>(x.n * x.length);
  for (std::size_t i = 0; i < x.values.size(); ++i) stats.mean[i % x.channels] += x.values[i];
  for (auto& m : stats.mean) m /= count;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double dv = x.values[i] - stats.mean[i % x.channels];
    stats.stddev[i % x.channels] += dv * dv;
  }
  for (auto& s : stats.stddev) {
    s = std::sqrt(s / count);
    if (s < kMinStddev) s = 1.0;
  }
  return stats;
}

void apply_channel_stats(SeriesTensor& x, const ChannelStats& stats) {
  if (stats.mean.size() != x.channels) throw DataError("channel statistics do not match channel count");
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const std::size_t c = i % x.channels;
    x.values[i] = static_cast<float>((x.values[i] - stats.mean[c]) / stats.stddev[c]);
  }
}

StandardizedSets standardize(const TimeSeriesDataset& train, std::span<const TimeSeriesDataset> others) {
  StandardizedSets out;
  out.stats = fit_channel_stats(train.samples);
  out.train = train;
  apply_channel_stats(out.train.samples, out.stats);
  for (const auto& o : others) {
    auto copy = o;
    apply_channel_stats(copy.samples, out.stats);
    out.others.push_back(std::move(copy));
  }
  return out;
}

SeriesTensor magnitude_spectrum(const SeriesTensor& x, bool log_magnitude) {
  const std::size_t t = x.length;
  const std::size_t bins = t / 2 + 1;
  SeriesTensor out(x.n, bins, x.channels);
  double* in = fftw_alloc_real(t);
  fftw_complex* spec = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(t), in, spec, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t c = 0; c < x.channels; ++c) {
      for (std::size_t s = 0; s < t; ++s) in[s] = x.at(i, s, c);
      fftw_execute(plan);
      for (std::size_t f = 0; f < bins; ++f) {
        double mag = std::hypot(spec[f][0], spec[f][1]);
        if (log_magnitude) mag = std::log1p(mag);
        out.at(i, f, c) = static_cast<float>(mag);
      }
    }
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(spec);
  return out;
}

FrequencyView compute_frequency_view(const TimeSeriesDataset& ds, bool log_magnitude) {
  return FrequencyView{magnitude_spectrum(ds.samples, log_magnitude)};
}

TimeSeriesDataset inject_noise(const TimeSeriesDataset& ds, const NoiseSpec& spec) {
  if (spec.kind == NoiseKind::missing && (spec.level < 0.0 || spec.level > 1.0))
    throw std::invalid_argument("missing ratio must be in [0, 1]");
  if (spec.kind == NoiseKind::gaussian && spec.level < 0.0)
    throw std::invalid_argument("gaussian sigma must be >= 0");
  TimeSeriesDataset out = ds;
  if (spec.level == 0.0) return out;
  std::mt19937_64 rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(spec.kind)}));
  auto& x = out.samples;
  if (spec.kind == NoiseKind::missing) {
    for (std::size_t i = 0; i < x.n; ++i) {
      for (std::size_t s = 0; s < x.length; ++s) {
        if (uniform01(rng) < spec.level) {
          for (std::size_t c = 0; c < x.channels; ++c) x.at(i, s, c) = 0.0f;
        }
      }
    }
  } else {
    std::normal_distribution<double> noise(0.0, spec.level);
    for (auto& v : x.values) v = static_cast<float>(v + noise(rng));
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> partition_groups(std::vector<std::vector<std::size_t>> groups,
                                                       std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw std::invalid_argument("split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    std::mt19937_64 rng(derive_seed(seed, {0x5B117, g}));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto counts = allocate_counts(idx.size(), fractions);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
      parts[j].insert(parts[j].end(), idx.begin() + pos, idx.begin() + pos + counts[j]);
      pos += counts[j];
    }
  }
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].empty()) throw std::invalid_argument("split: fraction " + std::to_string(j) + " yields an empty split");
    std::sort(parts[j].begin(), parts[j].end());
  }
  return parts;
}

}  // namespace

std::vector<std::vector<std::size_t>> stratified_partition(std::span<const int> labels, std::span<const double> fractions,
                                                           std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw std::invalid_argument("split: negative label");
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= groups.size()) groups.resize(c + 1);
    groups[c].push_back(i);
  }
  return partition_groups(std::move(groups), fractions, seed);
}

std::vector<std::vector<std::size_t>> split_indices(const TimeSeriesDataset& ds, std::span<const double> fractions,
                                                    std::uint64_t seed) {
  if (ds.labels) return stratified_partition(*ds.labels, fractions, seed);
  std::vector<std::vector<std::size_t>> groups(1, std::vector<std::size_t>(ds.size()));
  std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  return partition_groups(std::move(groups), fractions, seed);
}

std::vector<TimeSeriesDataset> split(const TimeSeriesDataset& ds, std::span<const double> fractions,
                                     std::uint64_t seed) {
  std::vector<TimeSeriesDataset> out;
  for (const auto& idx : split_indices(ds, fractions, seed)) out.push_back(ds.subset(idx));
  return out;
}

LabeledSubset label_subset(const TimeSeriesDataset& ds, double fraction, std::uint64_t seed) {
  if (!ds.labels) throw DataError("label_subset: dataset has no labels");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("label_subset: fraction must be in (0, 1]");
  LabeledSubset out;
  auto by_class = indices_by_class(ds);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw DataError("label_subset: class " + std::to_string(c) + " has no samples");
    std::mt19937_64 rng(derive_seed(seed, {0x1ABE1, c}));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
    take = std::clamp<std::size_t>(take, 1, idx.size());
    out.indices.insert(out.indices.end(), idx.begin(), idx.begin() + take);
  }
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed) {
  if (batch_size < 2) throw std::invalid_argument("instance loss requires at least 2 samples per batch");
  if (n < 2) throw std::invalid_argument("instance loss requires at least 2 samples per batch");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2 && !out.empty()) {
      out.back().insert(out.back().end(), perm.begin() + start, perm.begin() + end);
    } else {
      out.emplace_back(perm.begin() + start, perm.begin() + end);
    }
  }
  return out;
}

}  // namespace mvcot
