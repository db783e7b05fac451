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

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mvcot/training.hpp"

namespace mvcot {
namespace {

constexpr std::size_t kMagicLen = 7;

// Arrays are appended to one payload; the manifest records offset and shape.
class ArrayWriter {
 public:
  void add(const std::string& name, const Matrix& m) {
    entry(name, "float64", {m.rows(), m.cols()});
    for (Eigen::Index i = 0; i < m.size(); ++i) put(std::bit_cast<std::uint64_t>(m.data()[i]), 8);
  }
  void add(const std::string& name, const std::vector<int>& v) {
    entry(name, "int32", {static_cast<Eigen::Index>(v.size())});
    for (int x : v) put(std::bit_cast<std::uint32_t>(static_cast<std::int32_t>(x)), 4);
  }
  void add(const std::string& name, const std::vector<std::uint8_t>& v) {
    entry(name, "uint8", {static_cast<Eigen::Index>(v.size())});
    for (auto x : v) put(x, 1);
  }
  void add(const std::string& name, const std::vector<double>& v) {
    entry(name, "float64", {static_cast<Eigen::Index>(v.size())});
    for (double x : v) put(std::bit_cast<std::uint64_t>(x), 8);
  }
  nlohmann::json table = nlohmann::json::array();
  std::string payload;

 private:
  void entry(const std::string& name, const char* dtype, std::vector<Eigen::Index> shape) {
    table.push_back({{"name", name}, {"dtype", dtype}, {"shape", shape}, {"offset", payload.size()}});
  }
  void put(std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) payload.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
};

class ArrayReader {
 public:
  ArrayReader(const nlohmann::json& table, const unsigned char* payload, std::size_t size)
      : payload_(payload), size_(size) {
    for (const auto& e : table) entries_[e.at("name").get<std::string>()] = e;
  }
  Matrix matrix(const std::string& name) const {
    const auto& e = find(name, "float64", 2);
    const auto rows = e.at("shape")[0].get<Eigen::Index>();
    const auto cols = e.at("shape")[1].get<Eigen::Index>();
    Matrix m(rows, cols);
    const unsigned char* p = span(e, static_cast<std::size_t>(rows * cols) * 8);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(get(p + 8 * i, 8));
    return m;
  }
  std::vector<double> doubles(const std::string& name) const {
    const auto& e = find(name, "float64", 1);
    const auto n = e.at("shape")[0].get<std::size_t>();
    const unsigned char* p = span(e, n * 8);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<double>(get(p + 8 * i, 8));
    return out;
  }
  std::vector<int> ints(const std::string& name) const {
    const auto& e = find(name, "int32", 1);
    const auto n = e.at("shape")[0].get<std::size_t>();
    const unsigned char* p = span(e, n * 4);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = static_cast<int>(std::bit_cast<std::int32_t>(static_cast<std::uint32_t>(get(p + 4 * i, 4))));
    return out;
  }
  std::vector<std::uint8_t> bytes(const std::string& name) const {
    const auto& e = find(name, "uint8", 1);
    const auto n = e.at("shape")[0].get<std::size_t>();
    const unsigned char* p = span(e, n);
    return {p, p + n};
  }

 private:
  const nlohmann::json& find(const std::string& name, const char* dtype, std::size_t rank) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw DataError("corrupt manifest: missing array '" + name + "'");
    if (it->second.at("dtype") != dtype || it->second.at("shape").size() != rank)
      throw DataError("corrupt manifest: array '" + name + "' has unexpected dtype or rank");
    return it->second;
  }
  const unsigned char* span(const nlohmann::json& e, std::size_t len) const {
    const auto off = e.at("offset").get<std::size_t>();
    if (off + len > size_) throw DataError("corrupt manifest: array '" + e.at("name").get<std::string>() + "' overruns payload");
    return payload_ + off;
  }
  static std::uint64_t get(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return v;
  }
  const unsigned char* payload_;
  std::size_t size_;
  std::map<std::string, nlohmann::json> entries_;
};

void write_encoder(ArrayWriter& w, const std::string& prefix, const EncoderParams& p) {
  for (const auto& [name, m] : p.named_arrays()) w.add(prefix + "." + name, *m);
}

void read_encoder(const ArrayReader& r, const std::string& prefix, EncoderParams& p) {
  for (auto& [name, m] : p.named_arrays()) *m = r.matrix(prefix + "." + name);
}

EncoderParams skeleton(const EncoderConfig& cfg) {
  EncoderParams p;
  p.config = cfg;
  p.conv_weight.resize(cfg.levels);
  p.conv_bias.resize(cfg.levels);
  return p;
}

struct ParsedFile {
  nlohmann::json manifest;
  std::vector<unsigned char> bytes;
  std::size_t payload_offset = 0;
};

ParsedFile parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  ParsedFile f;
  f.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (f.bytes.size() < kMagicLen + 4) throw DataError("checkpoint truncated: " + path.string());
  if (std::memcmp(f.bytes.data(), "TSCKPT", 6) != 0) throw DataError("not a checkpoint (bad magic): " + path.string());
  if (std::memcmp(f.bytes.data(), kCheckpointMagic, kMagicLen) != 0)
    throw DataError("checkpoint version mismatch: expected " + std::string(kCheckpointMagic));
  const unsigned char* p = f.bytes.data() + kMagicLen;
  const std::uint32_t len = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  if (f.bytes.size() < kMagicLen + 4 + len) throw DataError("corrupt manifest: truncated");
  try {
    f.manifest = nlohmann::json::parse(f.bytes.begin() + kMagicLen + 4, f.bytes.begin() + kMagicLen + 4 + len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt manifest: ") + e.what());
  }
  if (f.manifest.value("schema_version", -1) != kCheckpointSchemaVersion)
    throw DataError("checkpoint version mismatch: unsupported schema_version");
  f.payload_offset = kMagicLen + 4 + len;
  return f;
}

}  // namespace

void checkpoint(const TrainState& st, const std::filesystem::path& path) {
  ArrayWriter w;
  w.add("normalization.time.mean", st.normalization.time.mean);
  w.add("normalization.time.stddev", st.normalization.time.stddev);
  w.add("normalization.freq.mean", st.normalization.freq.mean);
  w.add("normalization.freq.stddev", st.normalization.freq.stddev);
  nlohmann::json views = nlohmann::json::object();
  auto put_view = [&](const char* tag, const EncoderParams& enc, const OptimizerState& opt) {
    if (enc.empty()) return;
    const std::string t(tag);
    write_encoder(w, "encoder_" + t, enc);
    write_encoder(w, "optimizer_" + t + ".m", opt.first_moment);
    write_encoder(w, "optimizer_" + t + ".v", opt.second_moment);
    views[t] = {{"encoder", enc.config},
                {"optimizer", {{"step", opt.step}, {"lr", opt.lr}, {"beta1", opt.beta1}, {"beta2", opt.beta2}, {"eps", opt.eps}}}};
  };
  put_view("h", st.encoder_h, st.optimizer_h);
  put_view("g", st.encoder_g, st.optimizer_g);
  nlohmann::json ways = nlohmann::json::array();
  for (std::size_t i = 0; i < st.bank.ways.size(); ++i) {
    const auto& way = st.bank.ways[i];
    ways.push_back({{"count", way.count}, {"initialized", way.initialized}});
    if (!way.initialized) continue;
    const std::string p = "bank.way" + std::to_string(i) + ".";
    w.add(p + "intra_h", way.intra_h);
    w.add(p + "intra_g", way.intra_g);
    w.add(p + "cross_h", way.cross_h);
    w.add(p + "cross_g", way.cross_g);
    w.add(p + "assign_h", way.assign_h);
    w.add(p + "assign_g", way.assign_g);
    w.add(p + "valid_h", way.valid_h);
    w.add(p + "valid_g", way.valid_g);
  }
  nlohmann::json manifest = {{"format", kCheckpointMagic},
                             {"schema_version", kCheckpointSchemaVersion},
                             {"epoch", st.epoch},
                             {"class_count", st.class_count},
                             {"config", st.config},
                             {"seeds", {{"base", st.config.seed}}},
                             {"log_magnitude", st.normalization.log_magnitude},
                             {"views", views},
                             {"prototype_ways", ways},
                             {"arrays", w.table}};
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, kMagicLen);
  const auto len = static_cast<std::uint32_t>(text.size());
  const char lb[4] = {static_cast<char>(len), static_cast<char>(len >> 8), static_cast<char>(len >> 16), static_cast<char>(len >> 24)};
  out.write(lb, 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(w.payload.data(), static_cast<std::streamsize>(w.payload.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) { return parse_file(path).manifest; }

TrainState restore(const std::filesystem::path& path) {
  const ParsedFile f = parse_file(path);
  const auto& m = f.manifest;
  try {
    ArrayReader r(m.at("arrays"), f.bytes.data() + f.payload_offset, f.bytes.size() - f.payload_offset);
    TrainState st;
    st.config = m.at("config").get<TrainConfig>();
    st.epoch = m.at("epoch").get<int>();
    st.class_count = m.at("class_count").get<int>();
    st.normalization.log_magnitude = m.at("log_magnitude").get<bool>();
    st.normalization.time = {r.doubles("normalization.time.mean"), r.doubles("normalization.time.stddev")};
    st.normalization.freq = {r.doubles("normalization.freq.mean"), r.doubles("normalization.freq.stddev")};
    auto get_view = [&](const char* tag, EncoderParams& enc, OptimizerState& opt) {
      const auto& views = m.at("views");
      if (!views.contains(tag)) return;
      const std::string t(tag);
      const auto& v = views.at(tag);
      enc = skeleton(v.at("encoder").get<EncoderConfig>());
      read_encoder(r, "encoder_" + t, enc);
      opt.first_moment = skeleton(enc.config);
      opt.second_moment = skeleton(enc.config);
      read_encoder(r, "optimizer_" + t + ".m", opt.first_moment);
      read_encoder(r, "optimizer_" + t + ".v", opt.second_moment);
      const auto& o = v.at("optimizer");
      opt.step = o.at("step").get<std::int64_t>();
      opt.lr = o.at("lr").get<double>();
      opt.beta1 = o.at("beta1").get<double>();
      opt.beta2 = o.at("beta2").get<double>();
      opt.eps = o.at("eps").get<double>();
    };
    get_view("h", st.encoder_h, st.optimizer_h);
    get_view("g", st.encoder_g, st.optimizer_g);
    const auto& ways = m.at("prototype_ways");
    for (std::size_t i = 0; i < ways.size(); ++i) {
      PrototypeWay way;
      way.count = ways[i].at("count").get<int>();
      way.initialized = ways[i].at("initialized").get<bool>();
      if (way.initialized) {
        const std::string p = "bank.way" + std::to_string(i) + ".";
        way.intra_h = r.matrix(p + "intra_h");
        way.intra_g = r.matrix(p + "intra_g");
        way.cross_h = r.matrix(p + "cross_h");
        way.cross_g = r.matrix(p + "cross_g");
        way.assign_h = r.ints(p + "assign_h");
        way.assign_g = r.ints(p + "assign_g");
        way.valid_h = r.bytes(p + "valid_h");
        way.valid_g = r.bytes(p + "valid_g");
      }
      st.bank.ways.push_back(std::move(way));
    }
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt manifest: ") + e.what());
  }
}

}  // namespace mvcot
