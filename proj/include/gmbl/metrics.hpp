#pragma once

#include <optional>

#include "gmbl/stopping.hpp"

namespace gmbl {

/// One row of metrics.csv. The loss partition satisfies
/// train_loss_total == weighted mean of the clean/corrupt sublosses.
/// Empty subsets (e.g. corrupt at rate 0) report 0 for their means.
struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss_total = 0.0;
  double train_loss_clean = 0.0;
  double train_loss_corrupt = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> val_acc;
  double rejection_mean_clean = 0.0;
  double rejection_mean_corrupt = 0.0;
  double abstain_fraction = 0.0;
  double lambda_mean = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  std::optional<Stage> stage;
};

}  // namespace gmbl
