#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gmbl/data.hpp"
#include "gmbl/errors.hpp"
#include "gmbl/metrics.hpp"
#include "gmbl/model.hpp"
#include "gmbl/noise.hpp"
#include "gmbl/schedule.hpp"
#include "gmbl/stopping.hpp"
#include "gmbl/theory.hpp"
#include "gmbl/verify.hpp"

namespace gmbl {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration. Serializes to/from a single JSON document; a run is
// exactly reproducible from that document.
// ---------------------------------------------------------------------------

enum class RunLoss { nll, gambler, gambler_sched_euc, gambler_sched_exp, lq };
enum class StoppingMode { none, aes, ves };

struct BlobsParams {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t classes = 2;
  std::size_t dim = 2;
  double separation = 4.0;
};

struct IdxParams {
  std::string train_images, train_labels, test_images, test_labels;
};

struct DatasetConfig {
  DataSource kind = DataSource::blobs;
  BlobsParams blobs;
  IdxParams idx;
};

struct StoppingConfig {
  StoppingMode mode = StoppingMode::none;
  double clean_rate = 0.0;  // required for aes
  double band = 0.15;
  std::size_t smoothing_window = 3;
  std::size_t min_epochs = 3;
  std::size_t patience = 5;
};

struct RunConfig {
  DatasetConfig dataset;
  std::size_t train_n = 0;  // 0 = use the whole training pool
  double val_fraction = 0.0;
  NoiseSpec noise;
  RunLoss loss = RunLoss::nll;
  double lambda = 2.0;  // fixed-lambda value for gambler runs
  double q = 0.7;
  bool mask_rejection = false;
  std::size_t warmup_epochs = 0;
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::relu;
  double init_scale = 1.0;
  OptimizerSpec optimizer;
  std::size_t epochs = 10;
  StoppingConfig stopping;
  std::uint64_t seed = 0;
  std::string out_dir;

  bool is_gambler() const {
    return loss == RunLoss::gambler || loss == RunLoss::gambler_sched_euc ||
           loss == RunLoss::gambler_sched_exp;
  }

  void validate() const {
    noise.validate();
    optimizer.validate();
    if (epochs < 1) throw InvalidInput("RunConfig: epochs must be >= 1");
    if (stopping.mode == StoppingMode::aes) {
      if (!(stopping.clean_rate >= 0.5) || stopping.clean_rate > 1.0)
        throw InvalidInput("RunConfig: aes stopping requires clean_rate in [0.5, 1]");
      if (!(loss == RunLoss::gambler))
        throw InvalidInput("RunConfig: aes stopping requires the fixed-lambda gambler loss");
    }
    if (stopping.mode == StoppingMode::ves && !(val_fraction > 0.0))
      throw InvalidInput("RunConfig: ves stopping requires val_fraction > 0");
    if (out_dir.empty()) throw InvalidInput("RunConfig: out_dir is required");
  }
};

// --- enum <-> string -------------------------------------------------------

inline std::string to_string(RunLoss v) {
  switch (v) {
    case RunLoss::nll: return "nll";
    case RunLoss::gambler: return "gambler";
    case RunLoss::gambler_sched_euc: return "gambler-sched-euc";
    case RunLoss::gambler_sched_exp: return "gambler-sched-exp";
    case RunLoss::lq: return "lq";
  }
  throw Error("bad RunLoss");
}

inline RunLoss run_loss_from_string(const std::string& s) {
  if (s == "nll") return RunLoss::nll;
  if (s == "gambler") return RunLoss::gambler;
  if (s == "gambler-sched-euc") return RunLoss::gambler_sched_euc;
  if (s == "gambler-sched-exp") return RunLoss::gambler_sched_exp;
  if (s == "lq") return RunLoss::lq;
  throw InvalidInput("unknown loss: " + s);
}

inline std::string to_string(StoppingMode v) {
  switch (v) {
    case StoppingMode::none: return "none";
    case StoppingMode::aes: return "aes";
    case StoppingMode::ves: return "ves";
  }
  throw Error("bad StoppingMode");
}

inline StoppingMode stopping_mode_from_string(const std::string& s) {
  if (s == "none") return StoppingMode::none;
  if (s == "aes") return StoppingMode::aes;
  if (s == "ves") return StoppingMode::ves;
  throw InvalidInput("unknown stopping mode: " + s);
}

inline std::string to_string(NoiseKind v) {
  return v == NoiseKind::symmetric ? "symmetric" : "pairflip";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "symmetric") return NoiseKind::symmetric;
  if (s == "pairflip") return NoiseKind::pairflip;
  throw InvalidInput("unknown noise kind: " + s);
}

inline std::string to_string(Activation v) {
  return v == Activation::relu ? "relu" : "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidInput("unknown activation: " + s);
}

inline std::string to_string(OptimizerKind v) {
  switch (v) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd-momentum";
    case OptimizerKind::adaptive_moment: return "adaptive-moment";
  }
  throw Error("bad OptimizerKind");
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd-momentum") return OptimizerKind::sgd_momentum;
  if (s == "adaptive-moment") return OptimizerKind::adaptive_moment;
  throw InvalidInput("unknown optimizer: " + s);
}

inline std::string to_string(Stage v) {
  switch (v) {
    case Stage::fast_learning: return "fast-learning";
    case Stage::gap: return "gap";
    case Stage::memorization: return "memorization";
  }
  throw Error("bad Stage");
}

// --- JSON ------------------------------------------------------------------

inline json to_json(const RunConfig& cfg) {
  json d;
  d["kind"] = cfg.dataset.kind == DataSource::blobs ? "blobs" : "idx";
  if (cfg.dataset.kind == DataSource::blobs) {
    d["blobs"] = {{"n_train", cfg.dataset.blobs.n_train},
                  {"n_test", cfg.dataset.blobs.n_test},
                  {"classes", cfg.dataset.blobs.classes},
                  {"dim", cfg.dataset.blobs.dim},
                  {"separation", cfg.dataset.blobs.separation}};
  } else {
    d["idx"] = {{"train_images", cfg.dataset.idx.train_images},
                {"train_labels", cfg.dataset.idx.train_labels},
                {"test_images", cfg.dataset.idx.test_images},
                {"test_labels", cfg.dataset.idx.test_labels}};
  }
  json j;
  j["dataset"] = d;
  j["train_n"] = cfg.train_n;
  j["val_fraction"] = cfg.val_fraction;
  j["noise"] = {{"kind", to_string(cfg.noise.kind)},
                {"rate", cfg.noise.rate},
                {"seed", cfg.noise.seed}};
  j["loss"] = to_string(cfg.loss);
  j["lambda"] = cfg.lambda;
  j["q"] = cfg.q;
  j["mask_rejection"] = cfg.mask_rejection;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["model"] = {{"hidden", cfg.hidden},
                {"activation", to_string(cfg.activation)},
                {"init_scale", cfg.init_scale}};
  j["optimizer"] = {{"kind", to_string(cfg.optimizer.kind)},
                    {"learning_rate", cfg.optimizer.learning_rate},
                    {"momentum", cfg.optimizer.momentum},
                    {"batch_size", cfg.optimizer.batch_size}};
  j["epochs"] = cfg.epochs;
  j["stopping"] = {{"mode", to_string(cfg.stopping.mode)},
                   {"clean_rate", cfg.stopping.clean_rate},
                   {"band", cfg.stopping.band},
                   {"smoothing_window", cfg.stopping.smoothing_window},
                   {"min_epochs", cfg.stopping.min_epochs},
                   {"patience", cfg.stopping.patience}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  const json& d = j.at("dataset");
  const std::string kind = d.at("kind").get<std::string>();
  if (kind == "blobs") {
    cfg.dataset.kind = DataSource::blobs;
    const json& b = d.at("blobs");
    cfg.dataset.blobs.n_train = b.at("n_train").get<std::size_t>();
    cfg.dataset.blobs.n_test = b.at("n_test").get<std::size_t>();
    cfg.dataset.blobs.classes = b.at("classes").get<std::size_t>();
    cfg.dataset.blobs.dim = b.at("dim").get<std::size_t>();
    cfg.dataset.blobs.separation = b.at("separation").get<double>();
  } else if (kind == "idx") {
    cfg.dataset.kind = DataSource::idx;
    const json& x = d.at("idx");
    cfg.dataset.idx.train_images = x.at("train_images").get<std::string>();
    cfg.dataset.idx.train_labels = x.at("train_labels").get<std::string>();
    cfg.dataset.idx.test_images = x.at("test_images").get<std::string>();
    cfg.dataset.idx.test_labels = x.at("test_labels").get<std::string>();
  } else {
    throw InvalidInput("unknown dataset kind: " + kind);
  }
  cfg.train_n = j.at("train_n").get<std::size_t>();
  cfg.val_fraction = j.at("val_fraction").get<double>();
  cfg.noise.kind = noise_kind_from_string(j.at("noise").at("kind").get<std::string>());
  cfg.noise.rate = j.at("noise").at("rate").get<double>();
  cfg.noise.seed = j.at("noise").at("seed").get<std::uint64_t>();
  cfg.loss = run_loss_from_string(j.at("loss").get<std::string>());
  cfg.lambda = j.at("lambda").get<double>();
  cfg.q = j.at("q").get<double>();
  cfg.mask_rejection = j.at("mask_rejection").get<bool>();
  cfg.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
  cfg.hidden = j.at("model").at("hidden").get<std::vector<std::size_t>>();
  cfg.activation = activation_from_string(j.at("model").at("activation").get<std::string>());
  cfg.init_scale = j.at("model").at("init_scale").get<double>();
  cfg.optimizer.kind =
      optimizer_kind_from_string(j.at("optimizer").at("kind").get<std::string>());
  cfg.optimizer.learning_rate = j.at("optimizer").at("learning_rate").get<double>();
  cfg.optimizer.momentum = j.at("optimizer").at("momentum").get<double>();
  cfg.optimizer.batch_size = j.at("optimizer").at("batch_size").get<std::size_t>();
  cfg.epochs = j.at("epochs").get<std::size_t>();
  cfg.stopping.mode = stopping_mode_from_string(j.at("stopping").at("mode").get<std::string>());
  cfg.stopping.clean_rate = j.at("stopping").at("clean_rate").get<double>();
  cfg.stopping.band = j.at("stopping").at("band").get<double>();
  cfg.stopping.smoothing_window = j.at("stopping").at("smoothing_window").get<std::size_t>();
  cfg.stopping.min_epochs = j.at("stopping").at("min_epochs").get<std::size_t>();
  cfg.stopping.patience = j.at("stopping").at("patience").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

// ---------------------------------------------------------------------------
// File helpers. All writes are whole-file atomic (temp + rename).
// ---------------------------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Shortest round-trip-exact decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Short human-facing form for names and labels.
inline std::string format_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// metrics.csv. Fixed header; columns are never reordered without a bump of
// kSummarySchemaVersion.
// ---------------------------------------------------------------------------

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kMetricsHeader =
    "epoch,train_loss_total,train_loss_clean,train_loss_corrupt,train_acc,"
    "test_acc,val_acc,rejection_mean_clean,rejection_mean_corrupt,"
    "abstain_fraction,lambda_mean,lambda_min,lambda_max,stage";

inline std::string metrics_to_csv(const std::vector<EpochRecord>& records) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const EpochRecord& r : records) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss_total, r.train_loss_clean, r.train_loss_corrupt,
                     r.train_acc, r.test_acc}) {
      out += ',';
      out += format_double(v);
    }
    out += ',';
    if (r.val_acc) out += format_double(*r.val_acc);
    for (double v : {r.rejection_mean_clean, r.rejection_mean_corrupt,
                     r.abstain_fraction, r.lambda_mean, r.lambda_min, r.lambda_max}) {
      out += ',';
      out += format_double(v);
    }
    out += ',';
    if (r.stage) out += to_string(*r.stage);
    out += '\n';
  }
  return out;
}

inline std::vector<EpochRecord> metrics_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("metrics csv: empty");
  if (line != kMetricsHeader) throw FormatError("metrics csv: unexpected header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 14) throw FormatError("metrics csv: bad field count");
    EpochRecord r;
    r.epoch = std::stoul(f[0]);
    r.train_loss_total = std::stod(f[1]);
    r.train_loss_clean = std::stod(f[2]);
    r.train_loss_corrupt = std::stod(f[3]);
    r.train_acc = std::stod(f[4]);
    r.test_acc = std::stod(f[5]);
    if (!f[6].empty()) r.val_acc = std::stod(f[6]);
    r.rejection_mean_clean = std::stod(f[7]);
    r.rejection_mean_corrupt = std::stod(f[8]);
    r.abstain_fraction = std::stod(f[9]);
    r.lambda_mean = std::stod(f[10]);
    r.lambda_min = std::stod(f[11]);
    r.lambda_max = std::stod(f[12]);
    if (f[13] == "fast-learning") r.stage = Stage::fast_learning;
    else if (f[13] == "gap") r.stage = Stage::gap;
    else if (f[13] == "memorization") r.stage = Stage::memorization;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Noisy-label sidecar: magic "GMBN", version u32, n_train u64, n_val u64,
// then clean labels, noisy labels (u32 little-endian each) and the corrupt
// mask (u8), each over train followed by val.
// ---------------------------------------------------------------------------

struct LabelSidecar {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<std::size_t> clean_labels;
  std::vector<std::size_t> noisy_labels;
  std::vector<std::uint8_t> corrupt_mask;
};

inline void save_label_sidecar(const std::filesystem::path& path, const LabelSidecar& s) {
  std::ostringstream out(std::ios::binary);
  out.write("GMBN", 4);
  detail::write_u32_le(out, 1);
  auto write_u64 = [&](std::uint64_t v) {
    detail::write_u32_le(out, static_cast<std::uint32_t>(v));
    detail::write_u32_le(out, static_cast<std::uint32_t>(v >> 32));
  };
  write_u64(s.n_train);
  write_u64(s.n_val);
  for (std::size_t v : s.clean_labels) detail::write_u32_le(out, static_cast<std::uint32_t>(v));
  for (std::size_t v : s.noisy_labels) detail::write_u32_le(out, static_cast<std::uint32_t>(v));
  out.write(reinterpret_cast<const char*>(s.corrupt_mask.data()),
            static_cast<std::streamsize>(s.corrupt_mask.size()));
  write_file_atomic(path, out.str());
}

inline LabelSidecar load_label_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_label_sidecar: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GMBN")
    throw FormatError("load_label_sidecar: bad magic");
  if (detail::read_u32_le(in) != 1)
    throw FormatError("load_label_sidecar: unsupported version");
  auto read_u64 = [&]() {
    const std::uint64_t lo = detail::read_u32_le(in);
    const std::uint64_t hi = detail::read_u32_le(in);
    return lo | (hi << 32);
  };
  LabelSidecar s;
  s.n_train = read_u64();
  s.n_val = read_u64();
  const std::size_t n = s.n_train + s.n_val;
  s.clean_labels.resize(n);
  s.noisy_labels.resize(n);
  s.corrupt_mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.clean_labels[i] = detail::read_u32_le(in);
  for (std::size_t i = 0; i < n; ++i) s.noisy_labels[i] = detail::read_u32_le(in);
  in.read(reinterpret_cast<char*>(s.corrupt_mask.data()), static_cast<std::streamsize>(n));
  if (!in) throw IoError("load_label_sidecar: truncated file");
  return s;
}

// ---------------------------------------------------------------------------
// Training runs.
// ---------------------------------------------------------------------------

struct PreparedRun {
  CorruptedDataset train;
  Dataset val;  // inputs + noisy labels (validation is corrupted too)
  Dataset test;
  LabelSidecar sidecar;
  std::size_t num_classes = 0;
  Rng rng;

  explicit PreparedRun(std::uint64_t seed) : rng(seed) {}
};

/// Deterministically materialize the dataset, splits and label noise for a
/// config. Identical config => identical bits everywhere downstream.
inline PreparedRun prepare_run(const RunConfig& cfg) {
  PreparedRun prep(cfg.seed);
  Dataset pool, test;
  if (cfg.dataset.kind == DataSource::blobs) {
    const BlobsParams& b = cfg.dataset.blobs;
    // One draw for pool + test so both share the same cluster centers.
    Dataset all = generate_blobs(b.n_train + b.n_test, b.classes, b.dim,
                                 b.separation, prep.rng);
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    pool = detail::take_rows(all, idx, 0, b.n_train);
    test = detail::take_rows(all, idx, b.n_train, all.size());
    prep.num_classes = b.classes;
  } else {
    pool = load_idx(cfg.dataset.idx.train_images, cfg.dataset.idx.train_labels);
    test = load_idx(cfg.dataset.idx.test_images, cfg.dataset.idx.test_labels);
    std::size_t m = 0;
    for (std::size_t y : pool.labels) m = std::max(m, y + 1);
    for (std::size_t y : test.labels) m = std::max(m, y + 1);
    prep.num_classes = m;
  }

  const std::size_t train_n = cfg.train_n == 0 ? pool.size() : cfg.train_n;
  SplitDataset split = subset_split(pool, test, train_n, cfg.val_fraction, prep.rng);

  // Noise over train + val together; the validation labels stay noisy.
  std::vector<std::size_t> combined = split.train.labels;
  combined.insert(combined.end(), split.val.labels.begin(), split.val.labels.end());
  InjectedLabels injected = inject(combined, prep.num_classes, cfg.noise);

  const std::size_t nt = split.train.size();
  prep.train.inputs = std::move(split.train.inputs);
  prep.train.clean_labels = split.train.labels;
  prep.train.noisy_labels.assign(injected.noisy_labels.begin(),
                                 injected.noisy_labels.begin() + nt);
  prep.train.corrupt_mask.assign(injected.corrupt_mask.begin(),
                                 injected.corrupt_mask.begin() + nt);

  prep.val.inputs = std::move(split.val.inputs);
  prep.val.labels.assign(injected.noisy_labels.begin() + nt, injected.noisy_labels.end());

  prep.test = std::move(split.test);

  prep.sidecar.n_train = nt;
  prep.sidecar.n_val = prep.val.size();
  prep.sidecar.clean_labels = combined;
  prep.sidecar.noisy_labels = injected.noisy_labels;
  prep.sidecar.corrupt_mask = injected.corrupt_mask;
  return prep;
}

inline LossSpec loss_spec_for(const RunConfig& cfg) {
  LossSpec spec;
  switch (cfg.loss) {
    case RunLoss::nll: spec.kind = LossKind::nll; break;
    case RunLoss::lq: spec.kind = LossKind::lq; break;
    default: spec.kind = LossKind::gambler; break;
  }
  spec.q = cfg.q;
  spec.mask_rejection = cfg.mask_rejection;
  return spec;
}

inline LambdaSchedule schedule_for(const RunConfig& cfg) {
  LambdaSchedule sched;
  sched.warmup_epochs = cfg.warmup_epochs;
  switch (cfg.loss) {
    case RunLoss::gambler_sched_euc: sched.mode = ScheduleMode::euc; break;
    case RunLoss::gambler_sched_exp: sched.mode = ScheduleMode::exp; break;
    default:
      sched.mode = ScheduleMode::fixed;
      sched.fixed_value = cfg.lambda;
      break;
  }
  return sched;
}

struct RunResult {
  std::filesystem::path dir;
  std::vector<EpochRecord> records;
  json summary;
};

/// Execute one training run: writes config.json, metrics.csv, summary.json,
/// checkpoint.gmbl and labels.gmbn into cfg.out_dir. On divergence the
/// partial metrics are persisted and summary.status records the error.
inline RunResult run_train(const RunConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");

  PreparedRun prep = prepare_run(cfg);
  const std::size_t m = prep.num_classes;
  if (cfg.is_gambler() && cfg.loss == RunLoss::gambler &&
      (!(cfg.lambda > 1.0) || cfg.lambda > static_cast<double>(m)))
    throw InvalidHyperparameter("run_train: fixed gambler lambda must be in (1, m]");
  save_label_sidecar(dir / "labels.gmbn", prep.sidecar);

  MlpSpec mspec;
  mspec.layer_widths.push_back(prep.train.inputs.cols());
  for (std::size_t h : cfg.hidden) mspec.layer_widths.push_back(h);
  mspec.layer_widths.push_back(m + 1);
  mspec.activation = cfg.activation;
  mspec.init_scale = cfg.init_scale;

  Trainer trainer(mspec, cfg.optimizer, prep.rng);
  const LossSpec loss = loss_spec_for(cfg);
  const LambdaSchedule sched = schedule_for(cfg);

  // Plateau threshold for stage annotation / AES. Available for fixed-lambda
  // gambler runs whose clean rate is known.
  std::optional<double> threshold;
  double stage_clean_rate = cfg.stopping.mode == StoppingMode::aes
                                ? cfg.stopping.clean_rate
                                : 1.0 - cfg.noise.rate;
  if (cfg.loss == RunLoss::gambler && !cfg.mask_rejection &&
      stage_clean_rate >= 0.5 && stage_clean_rate <= 1.0 && cfg.lambda > 1.0) {
    threshold = plateau_threshold(stage_clean_rate, cfg.lambda).threshold;
  }

  AesConfig aes_cfg;
  aes_cfg.clean_rate = std::max(stage_clean_rate, 0.5);
  aes_cfg.lambda_ref = cfg.lambda;
  aes_cfg.band = cfg.stopping.band;
  aes_cfg.smoothing_window = cfg.stopping.smoothing_window;
  aes_cfg.min_epochs = cfg.stopping.min_epochs;
  VesConfig ves_cfg;
  ves_cfg.patience = cfg.stopping.patience;
  ves_cfg.split_fraction = cfg.val_fraction > 0.0 ? cfg.val_fraction : 0.1;

  RunResult result;
  result.dir = dir;
  std::vector<double> loss_history;
  std::vector<double> val_history;
  std::string status = "ok";
  std::string error_message;

  Mlp best_val_net = trainer.net();
  double best_val_acc = -1.0;
  std::optional<AesResult> aes_fired;
  std::optional<VesResult> ves_fired;

  try {
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
      EpochRecord rec = train_epoch(trainer, prep.train, prep.test, loss, sched, prep.rng);
      loss_history.push_back(rec.train_loss_total);
      if (prep.val.size() > 0) {
        const double va = evaluate_accuracy(trainer.net(), prep.val.inputs,
                                            prep.val.labels, !loss.uses_rejection());
        rec.val_acc = va;
        val_history.push_back(va);
        if (va > best_val_acc) {
          best_val_acc = va;
          best_val_net = trainer.net();
        }
      }
      if (threshold) {
        const auto stages = detect_stages(loss_history, *threshold, aes_cfg.band,
                                          aes_cfg.smoothing_window);
        rec.stage = stages.back();
      }
      result.records.push_back(rec);

      if (cfg.stopping.mode == StoppingMode::aes && threshold) {
        const AesResult r = aes_should_stop(loss_history, *threshold, aes_cfg);
        if (r.decision == AesDecision::stop_at_plateau) {
          aes_fired = r;
          break;
        }
        if (r.decision == AesDecision::overshoot_warning && !aes_fired) aes_fired = r;
      } else if (cfg.stopping.mode == StoppingMode::ves && !val_history.empty()) {
        const VesResult r = ves_should_stop(val_history, ves_cfg);
        if (r.decision == VesDecision::stop) {
          ves_fired = r;
          break;
        }
      }
    }
  } catch (const DivergenceError& err) {
    status = "diverged";
    error_message = err.what();
  }

  write_file_atomic(dir / "metrics.csv", metrics_to_csv(result.records));

  // Reported checkpoint: best-val model under VES, otherwise the model at
  // the stop (or final) epoch.
  if (cfg.stopping.mode == StoppingMode::ves && ves_fired) {
    save_checkpoint((dir / "checkpoint.gmbl").string(), best_val_net);
  } else {
    save_checkpoint((dir / "checkpoint.gmbl").string(), trainer.net());
  }

  json summary;
  summary["schema_version"] = kSummarySchemaVersion;
  summary["status"] = status;
  if (!error_message.empty()) summary["error"] = error_message;
  summary["epochs_run"] = result.records.size();
  if (!result.records.empty()) {
    const EpochRecord& last = result.records.back();
    summary["final_test_acc"] = last.test_acc;
    summary["final_train_acc"] = last.train_acc;
    summary["final_train_loss"] = last.train_loss_total;
    summary["final_abstain_fraction"] = last.abstain_fraction;
    std::size_t best_epoch = 0;
    double best_acc = -1.0;
    for (const EpochRecord& r : result.records) {
      if (r.test_acc > best_acc) {
        best_acc = r.test_acc;
        best_epoch = r.epoch;
      }
    }
    summary["best_test_acc"] = best_acc;
    summary["best_test_epoch"] = best_epoch;
  }
  if (threshold) {
    summary["plateau_threshold"] = *threshold;
    summary["plateau_band"] = aes_cfg.band;
  }

  json stopping;
  stopping["mode"] = to_string(cfg.stopping.mode);
  if (cfg.stopping.mode == StoppingMode::aes) {
    stopping["decision"] = aes_fired
        ? (aes_fired->decision == AesDecision::stop_at_plateau ? "stop-at-plateau"
                                                               : "overshoot-warning")
        : "continue";
    if (aes_fired) stopping["stop_epoch"] = aes_fired->epoch;
  } else if (cfg.stopping.mode == StoppingMode::ves) {
    stopping["decision"] = ves_fired ? "stop" : "continue";
    if (ves_fired) {
      stopping["stop_epoch"] = ves_fired->stop_epoch;
      stopping["best_epoch"] = ves_fired->best_epoch;
    }
  }
  summary["stopping"] = stopping;

  // Post-hoc evaluations of both rules over the full histories, regardless
  // of which one (if any) steered the run.
  if (threshold && !loss_history.empty()) {
    const AesResult r = aes_should_stop(loss_history, *threshold, aes_cfg);
    json a;
    a["decision"] = r.decision == AesDecision::stop_at_plateau ? "stop-at-plateau"
                    : r.decision == AesDecision::overshoot_warning ? "overshoot-warning"
                                                                   : "continue";
    a["stop_epoch"] = r.epoch;
    if (r.epoch > 0 && r.epoch <= result.records.size())
      a["test_acc_at_stop"] = result.records[r.epoch - 1].test_acc;
    summary["aes_eval"] = a;
  }
  if (!val_history.empty()) {
    const VesResult r = ves_should_stop(val_history, ves_cfg);
    json v;
    v["decision"] = r.decision == VesDecision::stop ? "stop" : "continue";
    v["stop_epoch"] = r.stop_epoch;
    v["best_epoch"] = r.best_epoch;
    if (r.best_epoch > 0 && r.best_epoch <= result.records.size())
      v["test_acc_at_best"] = result.records[r.best_epoch - 1].test_acc;
    summary["ves_eval"] = v;
  }

  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  result.summary = std::move(summary);
  if (status != "ok") throw DivergenceError("run diverged: " + error_message);
  return result;
}

// ---------------------------------------------------------------------------
// Lambda sweeps.
// ---------------------------------------------------------------------------

inline std::size_t sweep_parallelism() {
  if (const char* env = std::getenv("GMBL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

struct SweepResult {
  std::filesystem::path dir;
  std::vector<json> summaries;  // one per lambda, in grid order
};

/// One run per lambda under <out>/lambda_<value>/, then sweep.csv with the
/// per-lambda end state. Member runs may execute concurrently (each owns
/// its directory, state and rng); GMBL_THREADS caps the parallelism.
inline SweepResult run_sweep(const RunConfig& base, const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw InvalidInput("run_sweep: empty lambda grid");
  if (base.loss != RunLoss::gambler)
    throw InvalidInput("run_sweep: sweep requires the fixed-lambda gambler loss");
  const std::filesystem::path dir(base.out_dir);
  std::filesystem::create_directories(dir);

  std::vector<RunConfig> cfgs;
  for (double lambda : lambda_grid) {
    RunConfig cfg = base;
    cfg.lambda = lambda;
    cfg.out_dir = (dir / ("lambda_" + format_short(lambda))).string();
    cfgs.push_back(std::move(cfg));
  }

  std::vector<std::string> errors(cfgs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min(sweep_parallelism(), cfgs.size());
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfgs.size()) return;
      try {
        run_train(cfgs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    if (!errors[i].empty())
      throw Error("run_sweep: lambda " + format_short(lambda_grid[i]) +
                  " failed: " + errors[i]);
  }

  SweepResult result;
  result.dir = dir;
  std::string csv = "lambda,final_train_acc,final_test_acc,abstain_fraction\n";
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const json summary = json::parse(read_file(
        std::filesystem::path(cfgs[i].out_dir) / "summary.json"));
    csv += format_short(lambda_grid[i]);
    csv += ',';
    csv += format_double(summary.at("final_train_acc").get<double>());
    csv += ',';
    csv += format_double(summary.at("final_test_acc").get<double>());
    csv += ',';
    csv += format_double(summary.at("final_abstain_fraction").get<double>());
    csv += '\n';
    result.summaries.push_back(summary);
  }
  write_file_atomic(dir / "sweep.csv", csv);
  return result;
}

// ---------------------------------------------------------------------------
// Reports: rejection histogram (Figure 3 data) and stage annotations
// (Figure 5 data) for a completed run directory.
// ---------------------------------------------------------------------------

inline json verify_report_to_json(const VerifyReport& report) {
  json checks = json::array();
  for (const VerifyCheck& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"pass", c.pass},
                      {"max_error", c.max_error},
                      {"tolerance", c.tolerance},
                      {"count", c.count}});
  }
  return {{"all_pass", report.all_pass()}, {"checks", checks}};
}

inline void run_report(const std::filesystem::path& run_dir) {
  const auto metrics_path = run_dir / "metrics.csv";
  if (!std::filesystem::exists(metrics_path))
    throw IoError("run_report: missing " + metrics_path.string());
  const RunConfig cfg = run_config_from_json(json::parse(read_file(run_dir / "config.json")));
  const std::vector<EpochRecord> records = metrics_from_csv(read_file(metrics_path));

  // Rebuild the dataset deterministically and load the reported model.
  PreparedRun prep = prepare_run(cfg);
  MlpSpec mspec;
  mspec.layer_widths.push_back(prep.train.inputs.cols());
  for (std::size_t h : cfg.hidden) mspec.layer_widths.push_back(h);
  mspec.layer_widths.push_back(prep.num_classes + 1);
  mspec.activation = cfg.activation;
  mspec.init_scale = cfg.init_scale;
  Rng init_rng(cfg.seed);
  Mlp net(mspec, init_rng);
  load_checkpoint((run_dir / "checkpoint.gmbl").string(), net);

  const LossSpec loss = loss_spec_for(cfg);
  constexpr std::size_t kBins = 20;
  std::vector<std::size_t> clean_bins(kBins, 0), corrupt_bins(kBins, 0);
  const std::size_t n = prep.train.noisy_labels.size();
  const std::size_t dim = prep.train.inputs.cols();
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t stop = std::min(start + 256, n);
    Matrix chunk(stop - start, dim);
    std::copy(prep.train.inputs.row(start),
              prep.train.inputs.row(start) + (stop - start) * dim, chunk.data());
    const auto preds = forward(net, chunk, !loss.uses_rejection());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double rej = std::min(std::max(preds[i].rejection, 0.0), 1.0);
      std::size_t bin = static_cast<std::size_t>(rej * kBins);
      if (bin >= kBins) bin = kBins - 1;
      if (prep.train.corrupt_mask[start + i]) ++corrupt_bins[bin];
      else ++clean_bins[bin];
    }
  }
  std::string hist = "bin_lo,bin_hi,clean_count,corrupt_count\n";
  for (std::size_t b = 0; b < kBins; ++b) {
    hist += format_double(static_cast<double>(b) / kBins);
    hist += ',';
    hist += format_double(static_cast<double>(b + 1) / kBins);
    hist += ',';
    hist += std::to_string(clean_bins[b]);
    hist += ',';
    hist += std::to_string(corrupt_bins[b]);
    hist += '\n';
  }
  write_file_atomic(run_dir / "rejection_histogram.csv", hist);

  // Stage annotations + plateau comparison for fixed-lambda gambler runs.
  std::string summary_text;
  const double a = 1.0 - cfg.noise.rate;
  if (cfg.loss == RunLoss::gambler && !cfg.mask_rejection && a >= 0.5 && cfg.lambda > 1.0) {
    const double threshold = plateau_threshold(a, cfg.lambda).threshold;
    std::vector<double> losses;
    for (const EpochRecord& r : records) losses.push_back(r.train_loss_total);
    const auto stages = detect_stages(losses, threshold, cfg.stopping.band,
                                      cfg.stopping.smoothing_window);
    std::string csv = "epoch,stage\n";
    double gap_loss_sum = 0.0;
    std::size_t gap_count = 0;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      csv += std::to_string(records[i].epoch);
      csv += ',';
      csv += to_string(stages[i]);
      csv += '\n';
      if (stages[i] == Stage::gap) {
        gap_loss_sum += losses[i];
        ++gap_count;
      }
    }
    write_file_atomic(run_dir / "stages.csv", csv);
    std::ostringstream txt;
    txt << "plateau threshold (a=" << format_double(a)
        << ", lambda=" << format_double(cfg.lambda)
        << "): " << format_double(threshold) << "\n";
    if (gap_count > 0) {
      txt << "observed gap-stage mean training loss: "
          << format_double(gap_loss_sum / static_cast<double>(gap_count)) << " over "
          << gap_count << " epochs\n";
    } else {
      txt << "no gap-stage epochs observed\n";
    }
    summary_text = txt.str();
  } else {
    summary_text = "stage annotation unavailable: requires a fixed-lambda gambler run "
                   "with clean rate >= 0.5\n";
  }
  write_file_atomic(run_dir / "report.txt", summary_text);
}

}  // namespace gmbl
