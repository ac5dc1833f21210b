#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "gmbl/harness.hpp"

using namespace gmbl;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gmbl_harness_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

RunConfig tiny_blobs_config(const std::string& out, RunLoss loss = RunLoss::nll) {
  RunConfig cfg;
  cfg.dataset.kind = DataSource::blobs;
  cfg.dataset.blobs = {300, 100, 2, 2, 8.0};
  cfg.noise = {NoiseKind::symmetric, 0.0, 5};
  cfg.loss = loss;
  cfg.lambda = 1.9;
  cfg.hidden = {8};
  cfg.optimizer.batch_size = 32;
  cfg.optimizer.learning_rate = 0.05;
  cfg.epochs = 6;
  cfg.seed = 77;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("run config json round trip") {
  RunConfig cfg = tiny_blobs_config("/tmp/x", RunLoss::gambler_sched_euc);
  cfg.stopping.mode = StoppingMode::ves;
  cfg.val_fraction = 0.2;
  cfg.mask_rejection = true;
  cfg.noise = {NoiseKind::pairflip, 0.3, 9};
  cfg.activation = Activation::tanh;
  cfg.optimizer.kind = OptimizerKind::adaptive_moment;

  const json j = to_json(cfg);
  const RunConfig back = run_config_from_json(j);
  REQUIRE(to_json(back) == j);

  RunConfig idx_cfg = cfg;
  idx_cfg.dataset.kind = DataSource::idx;
  idx_cfg.dataset.idx = {"a.idx", "b.idx", "c.idx", "d.idx"};
  REQUIRE(to_json(run_config_from_json(to_json(idx_cfg))) == to_json(idx_cfg));
}

TEST_CASE("metrics csv round trip") {
  std::vector<EpochRecord> recs(3);
  recs[0].epoch = 1;
  recs[0].train_loss_total = 1.2345678901234567;
  recs[0].stage = Stage::fast_learning;
  recs[1].epoch = 2;
  recs[1].val_acc = 0.875;
  recs[1].stage = Stage::gap;
  recs[2].epoch = 3;
  recs[2].lambda_mean = 9.99;
  recs[2].stage = Stage::memorization;

  const std::string csv = metrics_to_csv(recs);
  const auto back = metrics_from_csv(csv);
  REQUIRE(back.size() == 3);
  CHECK(back[0].train_loss_total == recs[0].train_loss_total);
  CHECK(back[0].stage == Stage::fast_learning);
  CHECK_FALSE(back[0].val_acc.has_value());
  CHECK(back[1].val_acc == 0.875);
  CHECK(back[2].lambda_mean == 9.99);
  CHECK(metrics_to_csv(back) == csv);
}

TEST_CASE("label sidecar round trip") {
  LabelSidecar s;
  s.n_train = 3;
  s.n_val = 1;
  s.clean_labels = {0, 1, 2, 1};
  s.noisy_labels = {0, 2, 2, 0};
  s.corrupt_mask = {0, 1, 0, 1};
  const auto path = fresh_dir("sidecar") / "labels.gmbn";
  save_label_sidecar(path, s);
  const LabelSidecar back = load_label_sidecar(path);
  CHECK(back.n_train == 3);
  CHECK(back.n_val == 1);
  REQUIRE(back.clean_labels == s.clean_labels);
  REQUIRE(back.noisy_labels == s.noisy_labels);
  REQUIRE(back.corrupt_mask == s.corrupt_mask);
}

TEST_CASE("clean nll blobs run reaches high accuracy and full artifacts") {
  const auto dir = fresh_dir("clean_run");
  const RunConfig cfg = tiny_blobs_config((dir / "run").string());
  const RunResult result = run_train(cfg);

  CHECK(std::filesystem::exists(result.dir / "config.json"));
  CHECK(std::filesystem::exists(result.dir / "metrics.csv"));
  CHECK(std::filesystem::exists(result.dir / "summary.json"));
  CHECK(std::filesystem::exists(result.dir / "checkpoint.gmbl"));
  CHECK(std::filesystem::exists(result.dir / "labels.gmbn"));

  REQUIRE(result.records.size() == 6);
  CHECK(result.records.back().test_acc >= 0.99);
  // Rate 0: the clean-subset loss is the total loss.
  for (const EpochRecord& r : result.records) {
    CHECK(r.train_loss_clean == Catch::Approx(r.train_loss_total));
    CHECK(r.train_loss_corrupt == 0.0);
  }
  CHECK(result.summary.at("status") == "ok");
}

TEST_CASE("loss partition identity holds under noise") {
  const auto dir = fresh_dir("partition");
  RunConfig cfg = tiny_blobs_config((dir / "run").string(), RunLoss::gambler);
  cfg.noise.rate = 0.3;
  const RunResult result = run_train(cfg);
  const LabelSidecar sidecar = load_label_sidecar(result.dir / "labels.gmbn");
  std::size_t n_corrupt = 0;
  for (std::size_t i = 0; i < sidecar.n_train; ++i) n_corrupt += sidecar.corrupt_mask[i];
  const std::size_t n = sidecar.n_train;
  for (const EpochRecord& r : result.records) {
    const double reconstructed =
        (r.train_loss_clean * static_cast<double>(n - n_corrupt) +
         r.train_loss_corrupt * static_cast<double>(n_corrupt)) /
        static_cast<double>(n);
    REQUIRE(r.train_loss_total == Catch::Approx(reconstructed).margin(1e-9));
  }
}

TEST_CASE("rerun from config.json is bitwise identical") {
  const auto dir = fresh_dir("rerun");
  RunConfig cfg = tiny_blobs_config((dir / "a").string(), RunLoss::gambler);
  cfg.noise.rate = 0.2;
  cfg.val_fraction = 0.1;
  run_train(cfg);

  RunConfig reloaded = run_config_from_json(
      json::parse(read_file(dir / "a" / "config.json")));
  reloaded.out_dir = (dir / "b").string();
  run_train(reloaded);

  CHECK(read_file(dir / "a" / "metrics.csv") == read_file(dir / "b" / "metrics.csv"));
  CHECK(read_file(dir / "a" / "labels.gmbn") == read_file(dir / "b" / "labels.gmbn"));
}

TEST_CASE("masked gambler endpoint matches nll through the harness") {
  const auto dir = fresh_dir("endpoint");
  RunConfig nll_cfg = tiny_blobs_config((dir / "nll").string(), RunLoss::nll);
  nll_cfg.noise.rate = 0.2;
  RunConfig masked_cfg = tiny_blobs_config((dir / "masked").string(), RunLoss::gambler);
  masked_cfg.noise.rate = 0.2;
  masked_cfg.mask_rejection = true;
  masked_cfg.lambda = 2.0;  // lambda = m

  const RunResult a = run_train(nll_cfg);
  const RunResult b = run_train(masked_cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    REQUIRE(std::abs(a.records[i].train_loss_total - b.records[i].train_loss_total) <
            1e-9);
    REQUIRE(a.records[i].test_acc == b.records[i].test_acc);
  }
}

TEST_CASE("ves stopping halts and reports the best epoch") {
  const auto dir = fresh_dir("ves");
  RunConfig cfg = tiny_blobs_config((dir / "run").string());
  cfg.noise.rate = 0.2;
  cfg.val_fraction = 0.2;
  cfg.stopping.mode = StoppingMode::ves;
  cfg.stopping.patience = 2;
  cfg.epochs = 30;
  const RunResult result = run_train(cfg);
  const json& stopping = result.summary.at("stopping");
  if (stopping.at("decision") == "stop") {
    const std::size_t stop_epoch = stopping.at("stop_epoch").get<std::size_t>();
    CHECK(result.records.size() == stop_epoch);
    CHECK(stopping.at("best_epoch").get<std::size_t>() <= stop_epoch);
  }
}

TEST_CASE("config validation failures") {
  RunConfig cfg = tiny_blobs_config("/tmp/unused");
  cfg.stopping.mode = StoppingMode::aes;
  cfg.loss = RunLoss::gambler;
  cfg.stopping.clean_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);

  cfg = tiny_blobs_config("/tmp/unused");
  cfg.stopping.mode = StoppingMode::ves;
  cfg.val_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);

  cfg = tiny_blobs_config("");
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("sweep writes per-lambda runs and a grid csv") {
  const auto dir = fresh_dir("sweep");
  RunConfig base = tiny_blobs_config((dir / "sweep").string(), RunLoss::gambler);
  base.noise.rate = 0.2;
  base.epochs = 3;

  CHECK_THROWS_AS(run_sweep(base, {}), InvalidInput);

  const SweepResult result = run_sweep(base, {1.3, 1.9});
  CHECK(std::filesystem::exists(result.dir / "sweep.csv"));
  CHECK(std::filesystem::exists(result.dir / "lambda_1.3" / "metrics.csv"));
  CHECK(std::filesystem::exists(result.dir / "lambda_1.9" / "metrics.csv"));
  const std::string csv = read_file(result.dir / "sweep.csv");
  CHECK(csv.find("lambda,final_train_acc,final_test_acc,abstain_fraction") == 0);
  REQUIRE(result.summaries.size() == 2);
}

TEST_CASE("report artifacts") {
  const auto dir = fresh_dir("report");
  RunConfig cfg = tiny_blobs_config((dir / "run").string(), RunLoss::gambler);
  cfg.noise.rate = 0.0;
  cfg.epochs = 4;
  const RunResult result = run_train(cfg);
  run_report(result.dir);

  const std::string hist = read_file(result.dir / "rejection_histogram.csv");
  CHECK(hist.find("bin_lo,bin_hi,clean_count,corrupt_count") == 0);
  // Rate 0: the corrupt histogram is empty.
  std::istringstream in(hist);
  std::string line;
  std::getline(in, line);
  std::size_t corrupt_total = 0, rows = 0;
  while (std::getline(in, line)) {
    const auto pos = line.rfind(',');
    corrupt_total += std::stoul(line.substr(pos + 1));
    ++rows;
  }
  CHECK(rows == 20);
  CHECK(corrupt_total == 0);

  CHECK(std::filesystem::exists(result.dir / "stages.csv"));
  CHECK(std::filesystem::exists(result.dir / "report.txt"));

  CHECK_THROWS_AS(run_report(dir / "missing"), IoError);
}

TEST_CASE("divergence persists partial results") {
  const auto dir = fresh_dir("diverge");
  RunConfig cfg = tiny_blobs_config((dir / "run").string());
  cfg.optimizer.learning_rate = 1e160;
  cfg.epochs = 10;
  CHECK_THROWS_AS(run_train(cfg), DivergenceError);
  CHECK(std::filesystem::exists(dir / "run" / "summary.json"));
  const json summary = json::parse(read_file(dir / "run" / "summary.json"));
  CHECK(summary.at("status") == "diverged");
}
