// Command-line front end: train / sweep / verify-theory / report.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gmbl/harness.hpp"

namespace {

void add_run_options(CLI::App* cmd, gmbl::RunConfig& cfg, std::string& config_path,
                     std::string& dataset, std::string& noise_kind, std::string& loss,
                     std::string& stopping, std::string& activation,
                     std::string& optimizer) {
  cmd->add_option("--config", config_path,
                  "Load a run config.json; other flags override its fields");
  cmd->add_option("--dataset", dataset, "Dataset kind: blobs or idx");
  cmd->add_option("--blob-n-train", cfg.dataset.blobs.n_train, "Blobs: training pool size");
  cmd->add_option("--blob-n-test", cfg.dataset.blobs.n_test, "Blobs: test set size");
  cmd->add_option("--blob-classes", cfg.dataset.blobs.classes, "Blobs: number of classes");
  cmd->add_option("--blob-dim", cfg.dataset.blobs.dim, "Blobs: input dimension");
  cmd->add_option("--blob-separation", cfg.dataset.blobs.separation,
                  "Blobs: minimum distance between cluster centers");
  cmd->add_option("--idx-train-images", cfg.dataset.idx.train_images, "IDX train images path");
  cmd->add_option("--idx-train-labels", cfg.dataset.idx.train_labels, "IDX train labels path");
  cmd->add_option("--idx-test-images", cfg.dataset.idx.test_images, "IDX test images path");
  cmd->add_option("--idx-test-labels", cfg.dataset.idx.test_labels, "IDX test labels path");
  cmd->add_option("--train-n", cfg.train_n, "Training subset size (0 = all)");
  cmd->add_option("--val-fraction", cfg.val_fraction, "Validation fraction carved from train");
  cmd->add_option("--noise-kind", noise_kind, "Label noise: symmetric or pairflip");
  cmd->add_option("--noise-rate", cfg.noise.rate, "Corruption rate r");
  cmd->add_option("--noise-seed", cfg.noise.seed, "Noise injection seed");
  cmd->add_option("--loss", loss,
                  "nll | gambler | gambler-sched-euc | gambler-sched-exp | lq");
  cmd->add_option("--lambda", cfg.lambda, "Fixed gambler lambda");
  cmd->add_option("--q", cfg.q, "Lq loss hyperparameter");
  cmd->add_flag("--mask-rejection", cfg.mask_rejection,
                "Freeze the rejection logit out of the softmax");
  cmd->add_option("--warmup", cfg.warmup_epochs, "Warmup epochs at lambda = m");
  cmd->add_option("--hidden", cfg.hidden, "Hidden layer widths");
  cmd->add_option("--activation", activation, "relu or tanh");
  cmd->add_option("--init-scale", cfg.init_scale, "Weight init scale multiplier");
  cmd->add_option("--optimizer", optimizer, "sgd | sgd-momentum | adaptive-moment");
  cmd->add_option("--lr", cfg.optimizer.learning_rate, "Learning rate");
  cmd->add_option("--momentum", cfg.optimizer.momentum, "Momentum coefficient");
  cmd->add_option("--batch", cfg.optimizer.batch_size, "Batch size");
  cmd->add_option("--epochs", cfg.epochs, "Number of epochs");
  cmd->add_option("--stopping", stopping, "none | aes | ves");
  cmd->add_option("--clean-rate", cfg.stopping.clean_rate, "Clean rate a for AES");
  cmd->add_option("--band", cfg.stopping.band, "AES plateau band");
  cmd->add_option("--window", cfg.stopping.smoothing_window, "AES smoothing window");
  cmd->add_option("--min-epochs", cfg.stopping.min_epochs, "AES minimum epochs");
  cmd->add_option("--patience", cfg.stopping.patience, "VES patience");
  cmd->add_option("--seed", cfg.seed, "Run seed");
  cmd->add_option("--out", cfg.out_dir, "Output directory");
}

gmbl::RunConfig resolve_config(CLI::App* cmd, const gmbl::RunConfig& flags,
                               const std::string& config_path, const std::string& dataset,
                               const std::string& noise_kind, const std::string& loss,
                               const std::string& stopping, const std::string& activation,
                               const std::string& optimizer) {
  gmbl::RunConfig cfg = flags;
  if (!config_path.empty()) {
    cfg = gmbl::run_config_from_json(
        gmbl::json::parse(gmbl::read_file(config_path)));
    // Explicit flags win over the loaded file.
    auto seen = [&](const std::string& name) { return cmd->count(name) > 0; };
    if (seen("--train-n")) cfg.train_n = flags.train_n;
    if (seen("--val-fraction")) cfg.val_fraction = flags.val_fraction;
    if (seen("--noise-rate")) cfg.noise.rate = flags.noise.rate;
    if (seen("--noise-seed")) cfg.noise.seed = flags.noise.seed;
    if (seen("--lambda")) cfg.lambda = flags.lambda;
    if (seen("--q")) cfg.q = flags.q;
    if (seen("--mask-rejection")) cfg.mask_rejection = flags.mask_rejection;
    if (seen("--warmup")) cfg.warmup_epochs = flags.warmup_epochs;
    if (seen("--hidden")) cfg.hidden = flags.hidden;
    if (seen("--init-scale")) cfg.init_scale = flags.init_scale;
    if (seen("--lr")) cfg.optimizer.learning_rate = flags.optimizer.learning_rate;
    if (seen("--momentum")) cfg.optimizer.momentum = flags.optimizer.momentum;
    if (seen("--batch")) cfg.optimizer.batch_size = flags.optimizer.batch_size;
    if (seen("--epochs")) cfg.epochs = flags.epochs;
    if (seen("--clean-rate")) cfg.stopping.clean_rate = flags.stopping.clean_rate;
    if (seen("--band")) cfg.stopping.band = flags.stopping.band;
    if (seen("--window")) cfg.stopping.smoothing_window = flags.stopping.smoothing_window;
    if (seen("--min-epochs")) cfg.stopping.min_epochs = flags.stopping.min_epochs;
    if (seen("--patience")) cfg.stopping.patience = flags.stopping.patience;
    if (seen("--seed")) cfg.seed = flags.seed;
    if (seen("--out")) cfg.out_dir = flags.out_dir;
  }
  if (cmd->count("--dataset"))
    cfg.dataset.kind = dataset == "idx" ? gmbl::DataSource::idx : gmbl::DataSource::blobs;
  if (cmd->count("--blob-n-train")) cfg.dataset.blobs.n_train = flags.dataset.blobs.n_train;
  if (cmd->count("--blob-n-test")) cfg.dataset.blobs.n_test = flags.dataset.blobs.n_test;
  if (cmd->count("--blob-classes")) cfg.dataset.blobs.classes = flags.dataset.blobs.classes;
  if (cmd->count("--blob-dim")) cfg.dataset.blobs.dim = flags.dataset.blobs.dim;
  if (cmd->count("--blob-separation"))
    cfg.dataset.blobs.separation = flags.dataset.blobs.separation;
  if (cmd->count("--idx-train-images")) cfg.dataset.idx.train_images = flags.dataset.idx.train_images;
  if (cmd->count("--idx-train-labels")) cfg.dataset.idx.train_labels = flags.dataset.idx.train_labels;
  if (cmd->count("--idx-test-images")) cfg.dataset.idx.test_images = flags.dataset.idx.test_images;
  if (cmd->count("--idx-test-labels")) cfg.dataset.idx.test_labels = flags.dataset.idx.test_labels;
  if (cmd->count("--noise-kind")) cfg.noise.kind = gmbl::noise_kind_from_string(noise_kind);
  if (cmd->count("--loss")) cfg.loss = gmbl::run_loss_from_string(loss);
  if (cmd->count("--stopping")) cfg.stopping.mode = gmbl::stopping_mode_from_string(stopping);
  if (cmd->count("--activation")) cfg.activation = gmbl::activation_from_string(activation);
  if (cmd->count("--optimizer")) cfg.optimizer.kind = gmbl::optimizer_kind_from_string(optimizer);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gambler's-loss training under label noise"};
  app.require_subcommand(1);

  gmbl::RunConfig flags;
  std::string config_path, dataset = "blobs", noise_kind = "symmetric";
  std::string loss = "nll", stopping = "none", activation = "relu";
  std::string optimizer = "sgd-momentum";

  CLI::App* train = app.add_subcommand("train", "Run one training job");
  add_run_options(train, flags, config_path, dataset, noise_kind, loss, stopping,
                  activation, optimizer);

  CLI::App* sweep = app.add_subcommand("sweep", "Run a fixed-lambda grid");
  std::vector<double> lambda_grid;
  add_run_options(sweep, flags, config_path, dataset, noise_kind, loss, stopping,
                  activation, optimizer);
  sweep->add_option("--lambda-grid", lambda_grid, "Lambda values to sweep")->required();

  CLI::App* verify = app.add_subcommand("verify-theory",
                                        "Run the closed-form oracle suite");
  std::string verify_out;
  verify->add_option("--out", verify_out, "Write the JSON report here (default stdout)");

  CLI::App* report = app.add_subcommand("report", "Emit report artifacts for a run");
  std::string run_dir;
  report->add_option("--run", run_dir, "Completed run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      gmbl::RunConfig cfg = resolve_config(train, flags, config_path, dataset, noise_kind,
                                           loss, stopping, activation, optimizer);
      const gmbl::RunResult result = gmbl::run_train(cfg);
      std::cout << "run written to " << result.dir.string() << "\n";
      if (!result.records.empty()) {
        std::cout << "final test acc: "
                  << gmbl::format_double(result.records.back().test_acc) << "\n";
      }
    } else if (sweep->parsed()) {
      gmbl::RunConfig cfg = resolve_config(sweep, flags, config_path, dataset, noise_kind,
                                           loss, stopping, activation, optimizer);
      if (sweep->count("--loss") == 0 && config_path.empty())
        cfg.loss = gmbl::RunLoss::gambler;
      const gmbl::SweepResult result = gmbl::run_sweep(cfg, lambda_grid);
      std::cout << "sweep written to " << result.dir.string() << "\n";
    } else if (verify->parsed()) {
      const gmbl::VerifyReport rep = gmbl::run_verify_theory();
      const std::string text = gmbl::verify_report_to_json(rep).dump(2) + "\n";
      if (verify_out.empty()) {
        std::cout << text;
      } else {
        gmbl::write_file_atomic(verify_out, text);
      }
      for (const auto& c : rep.checks) {
        std::fprintf(stderr, "%-28s %s  max_error=%g\n", c.name.c_str(),
                     c.pass ? "pass" : "FAIL", c.max_error);
      }
      if (!rep.all_pass()) return 1;
    } else if (report->parsed()) {
      gmbl::run_report(run_dir);
      std::cout << "report artifacts written to " << run_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
