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

// mvcot: command-line driver for data generation, training, evaluation,
// robustness sweeps and ablations.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvcot/dataset.hpp"
#include "mvcot/eval.hpp"
#include "mvcot/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvcot {
namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;
constexpr int kExitData = 5;
constexpr int kLogSchemaVersion = 1;
constexpr std::uint64_t kCliSplitTag = 0x20;
constexpr std::uint64_t kCliLabelTag = 0x21;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

// Options shared by every training command. Config-file values are applied
// first, then any flag given on the command line.
struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, warmup, classes;
  std::optional<std::size_t> batch_size;
  std::optional<double> lambda, lr, gamma, tau, tau_proto;
  std::optional<bool> track_nmi, log_magnitude;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON config file (train settings, optionally under a \"train\" key)");
    app->add_option("--seed", seed, "Base seed");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--warmup", warmup, "Warm-up epochs (instance losses only)");
    app->add_option("--batch-size", batch_size, "Mini-batch size");
    app->add_option("--lambda", lambda, "Weight of the co-training losses");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--gamma", gamma, "Prototype moving-average rate");
    app->add_option("--tau", tau, "Instance contrastive temperature");
    app->add_option("--tau-proto", tau_proto, "Prototype contrastive temperature");
    app->add_option("--classes", classes, "Number of classes K (default: from the dataset)");
    app->add_flag("--track-nmi,!--no-track-nmi", track_nmi, "Record clustering NMI at the end of every epoch");
    app->add_flag("--log-magnitude,!--no-log-magnitude", log_magnitude, "Use log1p of the magnitude spectrum");
  }

  json file() const { return config.empty() ? json::object() : read_json(config); }

  TrainConfig resolve(const json& file) const {
    TrainConfig c;
    const json& section = file.contains("train") ? file.at("train") : file;
    try {
      if (!section.empty()) c = section.get<TrainConfig>();
    } catch (const json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (warmup) c.warmup_epochs = *warmup;
    if (batch_size) c.batch_size = *batch_size;
    if (lambda) c.loss.lambda = *lambda;
    if (lr) c.lr = *lr;
    if (gamma) c.gamma = *gamma;
    if (tau) c.loss.tau = *tau;
    if (tau_proto) c.loss.tau_proto = *tau_proto;
    if (classes) c.class_count = *classes;
    if (track_nmi) c.track_nmi = *track_nmi;
    if (log_magnitude) c.log_magnitude = *log_magnitude;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

template <class T>
T section_value(const json& file, const char* section, const char* key, T fallback) {
  if (file.contains(section) && file.at(section).contains(key)) return file.at(section).at(key).get<T>();
  return fallback;
}

json breakdown_json(const LossBreakdown& l) {
  return {{"inst_h", l.inst_h}, {"inst_g", l.inst_g}, {"cot_h", l.cot_h}, {"cot_g", l.cot_g}, {"total", l.total}};
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  int classes = 4, per_class = 64, length = 64, channels = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const auto ds = generate_synthetic(a.per_class, a.length, a.channels, a.classes, a.seed);
  write_dataset(ds, a.out);
  std::cout << "wrote " << a.out << ": " << ds.size() << " series, " << ds.samples.channels << " channel(s), length "
            << ds.samples.length << ", " << a.classes << " classes (" << a.per_class << " per class), seed " << a.seed
            << '\n';
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data, out, mode = "unsupervised";
  std::optional<double> labeled_fraction;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a) {
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  const json file = a.flags.file();
  TrainConfig cfg = a.flags.resolve(file);
  if (a.mode == "semi" || a.mode == "semi_supervised") cfg.mode = TrainMode::semi_supervised;
  else if (a.mode == "unsupervised") cfg.mode = TrainMode::unsupervised;
  else throw UsageError("--mode must be unsupervised or semi");
  if (a.labeled_fraction) {
    if (!(*a.labeled_fraction > 0.0 && *a.labeled_fraction <= 1.0))
      throw UsageError("--labeled-fraction must be in (0, 1]");
    cfg.labeled_fraction = *a.labeled_fraction;
  }

  const auto raw = load_dataset(a.data);
  if (cfg.class_count == 0) cfg.class_count = raw.class_count.value_or(0);
  const fs::path dir = a.out;
  const auto norm = fit_view_normalization(raw, cfg.log_magnitude);
  const auto views = build_views(raw, norm);

  json echo = file.contains("train") ? file : json::object();
  echo["schema_version"] = kLogSchemaVersion;
  echo["command"] = "train";
  echo["data"] = a.data;
  echo["train"] = cfg;
  write_json(dir / "config.json", echo);

  auto losses = open_out(dir / "losses.csv");
  losses << "schema_version,epoch,batch,inst_h,inst_g,cot_h,cot_g,total\n";
  auto epochs = open_out(dir / "epochs.jsonl");
  json wall = json::array();

  TrainObserver obs;
  obs.on_batch = [&](const BatchRecord& r) {
    losses << kLogSchemaVersion << ',' << r.epoch << ',' << r.batch << ',' << num(r.loss.inst_h) << ','
           << num(r.loss.inst_g) << ',' << num(r.loss.cot_h) << ',' << num(r.loss.cot_g) << ',' << num(r.loss.total)
           << '\n';
  };
  obs.on_epoch = [&](const EpochRecord& r, const TrainState&) {
    json j{{"schema_version", kLogSchemaVersion}, {"epoch", r.epoch},        {"phase", r.phase},
           {"mode", to_string(cfg.mode)},         {"mean", breakdown_json(r.mean)}, {"nmi", nullptr}};
    if (r.nmi) j["nmi"] = *r.nmi;
    epochs << j.dump() << '\n';
    epochs.flush();
    losses.flush();
    wall.push_back({{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}});
  };

  TrainResult result;
  if (cfg.mode == TrainMode::semi_supervised) {
    const auto subset = label_subset(raw, cfg.labeled_fraction, derive_seed(cfg.seed, {kCliLabelTag}));
    result = train_semi_supervised(views, subset, cfg, norm, obs);
  } else {
    result = train(views, cfg, norm, obs);
  }
  checkpoint(result.state, dir / "checkpoint.tsckpt");
  if (!losses || !epochs) throw IoError("failed writing training logs in " + dir.string());

  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json meta{{"schema_version", kLogSchemaVersion},
            {"started_utc", started},
            {"finished_utc", utc_now()},
            {"wall_seconds", total},
            {"epochs", wall}};
  if (result.initial_nmi) meta["initial_nmi"] = *result.initial_nmi;
  write_json(dir / "meta.json", meta);

  const auto& last = result.epochs.empty() ? EpochRecord{} : result.epochs.back();
  std::cout << "trained " << result.epochs.size() << " epoch(s) on " << raw.size() << " series ("
            << to_string(cfg.mode) << "), final mean loss " << num(last.mean.total) << "\n"
            << "checkpoint: " << (dir / "checkpoint.tsckpt").string() << '\n';
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, test, variant = "full", out;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a) {
  AblationVariant variant;
  try {
    variant = variant_from_string(a.variant);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const TrainState state = restore(a.checkpoint);
  const std::uint64_t seed = a.seed.value_or(state.config.seed);
  auto train_raw = load_dataset(a.data);
  if (!train_raw.has_labels()) throw DataError(a.data + ": evaluation needs a labelled dataset");
  TimeSeriesDataset test_raw;
  if (a.test.empty()) {
    const double fr[] = {1.0 - kTestFraction, kTestFraction};
    auto parts = split(train_raw, fr, derive_seed(seed, {kCliSplitTag}));
    train_raw = std::move(parts[0]);
    test_raw = std::move(parts[1]);
  } else {
    test_raw = load_dataset(a.test);
    if (!test_raw.has_labels()) throw DataError(a.test + ": evaluation needs a labelled dataset");
  }
  const auto train_views = build_views(train_raw, state.normalization);
  const auto test_views = build_views(test_raw, state.normalization);
  const Matrix tr = extract_embeddings(state, train_views, variant);
  const Matrix te = extract_embeddings(state, test_views, variant);
  const EvalReport report = linear_probe(tr, *train_raw.labels, te, *test_raw.labels, seed);

  json j = report;
  j["variant"] = to_string(variant);
  j["seed"] = seed;
  j["embedding_dim"] = tr.cols();
  j["train_size"] = train_raw.size();
  j["test_size"] = test_raw.size();
  if (a.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(a.out, j);
    std::cout << "variant " << to_string(variant) << ": accuracy " << num(report.accuracy) << ", auroc "
              << num(report.auroc) << ", nmi " << num(report.nmi) << "\nreport: " << a.out << '\n';
  }
  return 0;
}

// ---- sweep / ablate ------------------------------------------------------

struct SweepArgs {
  std::string data, out, kind, variant, corrupt;
  std::vector<double> levels;
  std::vector<std::uint64_t> seeds;
  TrainFlags flags;
};

fs::path echo_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".config.json");
  return p;
}

int cmd_sweep(const SweepArgs& a) {
  const json file = a.flags.file();
  const TrainConfig cfg = a.flags.resolve(file);
  const std::string kind_name = a.kind.empty() ? section_value<std::string>(file, "sweep", "kind", "missing") : a.kind;
  const std::string variant_name =
      a.variant.empty() ? section_value<std::string>(file, "sweep", "variant", "full") : a.variant;
  const auto levels =
      a.levels.empty() ? section_value<std::vector<double>>(file, "sweep", "levels", {0.0, 0.1, 0.3, 0.5}) : a.levels;
  const auto seeds =
      a.seeds.empty() ? section_value<std::vector<std::uint64_t>>(file, "sweep", "seeds", {0, 1, 2}) : a.seeds;
  const std::string corrupt = a.corrupt.empty() ? section_value<std::string>(file, "sweep", "corrupt", "both") : a.corrupt;
  NoiseTargets targets;
  if (corrupt == "train") targets.test = false;
  else if (corrupt == "test") targets.train = false;
  else if (corrupt != "both") throw UsageError("--corrupt must be both, train or test");
  NoiseKind kind;
  AblationVariant variant;
  try {
    kind = noise_kind_from_string(kind_name);
    variant = variant_from_string(variant_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<NoiseSpec> specs;
  for (double l : levels) specs.push_back({kind, l, 0});
  for (const auto& s : specs) {
    if (s.level < 0.0 || (kind == NoiseKind::missing && s.level > 1.0)) throw UsageError("noise level out of range");
  }

  const auto base = load_dataset(a.data);
  if (!base.has_labels()) throw DataError(a.data + ": sweeps need a labelled dataset");
  json echo{{"schema_version", kLogSchemaVersion},
            {"command", "sweep"},
            {"data", a.data},
            {"train", cfg},
            {"sweep", {{"kind", kind_name}, {"levels", levels}, {"seeds", seeds}, {"variant", to_string(variant)}, {"corrupt", corrupt}}}};
  write_json(echo_path(a.out), echo);
  auto csv = open_out(a.out);
  write_sweep_header(csv);
  const auto rows = robustness_sweep(base, specs, cfg, seeds, variant, [&](const SweepRow& r) {
    write_sweep_row(csv, r);
    std::cout << to_string(r.kind) << ' ' << num(r.level) << " seed " << r.seed << ": accuracy "
              << num(r.report.accuracy) << '\n';
  }, targets);
  if (!csv) throw IoError("write failed: " + a.out);
  std::cout << rows.size() << " row(s) written to " << a.out << '\n';
  return 0;
}

struct AblateArgs {
  std::string data, out;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  TrainFlags flags;
};

int cmd_ablate(const AblateArgs& a) {
  const json file = a.flags.file();
  const TrainConfig cfg = a.flags.resolve(file);
  const auto names = a.variants.empty()
                         ? section_value<std::vector<std::string>>(file, "ablate", "variants", {"T", "F", "T+F", "full"})
                         : a.variants;
  const auto seeds =
      a.seeds.empty() ? section_value<std::vector<std::uint64_t>>(file, "ablate", "seeds", {0, 1, 2}) : a.seeds;
  std::vector<AblationVariant> variants;
  std::vector<std::string> canonical;
  try {
    for (const auto& n : names) {
      variants.push_back(variant_from_string(n));
      canonical.push_back(to_string(variants.back()));
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto base = load_dataset(a.data);
  if (!base.has_labels()) throw DataError(a.data + ": ablations need a labelled dataset");
  json echo{{"schema_version", kLogSchemaVersion},
            {"command", "ablate"},
            {"data", a.data},
            {"train", cfg},
            {"ablate", {{"variants", canonical}, {"seeds", seeds}}}};
  write_json(echo_path(a.out), echo);
  auto csv = open_out(a.out);
  write_ablation_header(csv);
  const auto rows = run_ablation(base, variants, cfg, seeds, [&](const AblationRow& r) {
    write_ablation_row(csv, r);
    std::cout << to_string(r.variant) << " seed " << r.seed << ": accuracy " << num(r.report.accuracy) << '\n';
  });
  if (!csv) throw IoError("write failed: " + a.out);
  std::cout << rows.size() << " row(s) written to " << a.out << '\n';
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-view prototype co-training of time-series encoders"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labelled synthetic dataset (TSD)");
  s->add_option("--classes", synth.classes, "Number of classes")->check(CLI::Range(1, 1 << 20))->capture_default_str();
  s->add_option("--per-class", synth.per_class, "Series per class")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--length", synth.length, "Series length T")->check(CLI::Range(2, 1 << 24))->capture_default_str();
  s->add_option("--channels", synth.channels, "Channels D")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output TSD path")->required();

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train both view encoders and write a checkpoint plus logs");
  t->add_option("--data", train_args.data, "Training dataset (.tsd or .csv)")->required();
  t->add_option("--out", train_args.out, "Output run directory")->required();
  t->add_option("--mode", train_args.mode, "unsupervised or semi")->capture_default_str();
  t->add_option("--labeled-fraction", train_args.labeled_fraction,
                "Fraction of training labels used in semi-supervised mode (default 0.1)");
  train_args.flags.add(t);

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "Linear-probe evaluation of a checkpoint");
  e->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval_args.data, "Labelled dataset the probe is fit on")->required();
  e->add_option("--test", eval_args.test,
                "Labelled test dataset (default: stratified 80/20 split of --data)");
  e->add_option("--variant", eval_args.variant, "Embedding slice: T, F, T+F or full")->capture_default_str();
  e->add_option("--seed", eval_args.seed, "Probe seed (default: the checkpoint's seed)");
  e->add_option("--out", eval_args.out, "Report JSON path (default: print to stdout)");

  SweepArgs sweep_args;
  auto* w = app.add_subcommand("sweep", "Robustness sweep over noise levels and seeds");
  w->add_option("--data", sweep_args.data, "Labelled base dataset")->required();
  w->add_option("--out", sweep_args.out, "Output CSV; the config echo goes next to it")->required();
  w->add_option("--kind", sweep_args.kind, "missing or gaussian (default missing)");
  w->add_option("--levels", sweep_args.levels, "Noise levels (default 0 0.1 0.3 0.5)");
  w->add_option("--seeds", sweep_args.seeds, "Seeds (default 0 1 2)");
  w->add_option("--variant", sweep_args.variant, "Variant trained at every level (default full)");
  w->add_option("--corrupt", sweep_args.corrupt, "Which split receives noise: both, train or test (default both)");
  sweep_args.flags.add(w);

  AblateArgs ablate_args;
  auto* b = app.add_subcommand("ablate", "Train and evaluate ablation variants over seeds");
  b->add_option("--data", ablate_args.data, "Labelled base dataset")->required();
  b->add_option("--out", ablate_args.out, "Output CSV; the config echo goes next to it")->required();
  b->add_option("--variants", ablate_args.variants, "Variants (default T F T+F full)");
  b->add_option("--seeds", ablate_args.seeds, "Seeds (default 0 1 2)");
  ablate_args.flags.add(b);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  if (*s) return cmd_synth(synth);
  if (*t) return cmd_train(train_args);
  if (*e) return cmd_eval(eval_args);
  if (*w) return cmd_sweep(sweep_args);
  return cmd_ablate(ablate_args);
}

}  // namespace
}  // namespace mvcot

int main(int argc, char** argv) {
  using namespace mvcot;
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
