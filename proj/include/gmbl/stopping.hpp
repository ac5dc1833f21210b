#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "gmbl/errors.hpp"
#include "gmbl/theory.hpp"

namespace gmbl {

// Early stopping. AES watches the training loss for the mean-field plateau
// predicted by plateau_threshold (no validation set, requires the clean
// rate); VES is the classical hold-out patience rule.

struct AesConfig {
  double clean_rate = 1.0;
  double lambda_ref = 2.0;
  double band = 0.15;
  std::size_t smoothing_window = 3;
  std::size_t min_epochs = 3;

  void validate() const {
    if (!(band > 0.0)) throw InvalidInput("AesConfig: band must be > 0");
    if (smoothing_window < 1) throw InvalidInput("AesConfig: smoothing_window must be >= 1");
    if (!(clean_rate >= 0.5) || clean_rate > 1.0)
      throw InvalidInput("AesConfig: clean_rate must be in [0.5, 1]");
    if (!(lambda_ref > 1.0)) throw InvalidInput("AesConfig: lambda_ref must be > 1");
  }
};

struct VesConfig {
  std::size_t patience = 5;
  double split_fraction = 0.1;

  void validate() const {
    if (patience < 1) throw InvalidInput("VesConfig: patience must be >= 1");
    if (!(split_fraction > 0.0) || split_fraction >= 0.5)
      throw InvalidInput("VesConfig: split_fraction must be in (0, 0.5)");
  }
};

enum class AesDecision { keep_training, stop_at_plateau, overshoot_warning };

struct AesResult {
  AesDecision decision = AesDecision::keep_training;
  std::size_t epoch = 0;  // 1-based epoch at which the decision fired
};

/// Moving average of the trailing `window` entries ending at index t.
inline double smoothed_loss(std::span<const double> history, std::size_t t,
                            std::size_t window) {
  const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
  double s = 0.0;
  for (std::size_t i = lo; i <= t; ++i) s += history[i];
  return s / static_cast<double>(t - lo + 1);
}

/// Scan a training-loss history (one entry per epoch, epoch 1 first) for
/// the plateau band [threshold - band, threshold + band].
///
/// stop_at_plateau fires at the first epoch >= min_epochs whose smoothed
/// loss lies inside the band. overshoot_warning fires if the smoothed loss
/// drops below the band without ever having entered it: the optimizer
/// skipped the plateau between epoch-granularity measurements.
inline AesResult aes_should_stop(std::span<const double> loss_history,
                                 double threshold, const AesConfig& cfg) {
  cfg.validate();
  if (loss_history.empty()) throw InvalidInput("aes_should_stop: empty history");

  const double lo = threshold - cfg.band;
  const double hi = threshold + cfg.band;
  bool entered_band = false;
  for (std::size_t t = 0; t < loss_history.size(); ++t) {
    const double avg = smoothed_loss(loss_history, t, cfg.smoothing_window);
    const std::size_t epoch = t + 1;
    const bool in_band = avg >= lo && avg <= hi;
    if (in_band) entered_band = true;
    if (epoch < cfg.min_epochs) continue;
    if (in_band) return {AesDecision::stop_at_plateau, epoch};
    if (avg < lo && !entered_band)
      return {AesDecision::overshoot_warning, epoch};
  }
  return {AesDecision::keep_training, 0};
}

/// Spec-shaped overload: the plateau threshold comes from the config.
inline AesResult aes_should_stop(std::span<const double> loss_history,
                                 const AesConfig& cfg) {
  cfg.validate();
  const double threshold = plateau_threshold(cfg.clean_rate, cfg.lambda_ref).threshold;
  return aes_should_stop(loss_history, threshold, cfg);
}

enum class VesDecision { keep_training, stop };

struct VesResult {
  VesDecision decision = VesDecision::keep_training;
  std::size_t stop_epoch = 0;  // epoch at which the rule fired
  std::size_t best_epoch = 0;  // epoch whose model is reported
};

/// Stop once the running maximum of validation accuracy has not improved
/// for cfg.patience consecutive epochs; the reported model is the one at
/// the running-maximum epoch.
inline VesResult ves_should_stop(std::span<const double> val_acc_history,
                                 const VesConfig& cfg) {
  cfg.validate();
  if (val_acc_history.empty()) throw InvalidInput("ves_should_stop: empty history");

  std::size_t best_epoch = 1;
  double best = val_acc_history[0];
  for (std::size_t t = 1; t < val_acc_history.size(); ++t) {
    const std::size_t epoch = t + 1;
    if (val_acc_history[t] > best) {
      best = val_acc_history[t];
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      return {VesDecision::stop, epoch, best_epoch};
    }
  }
  return {VesDecision::keep_training, 0, best_epoch};
}

enum class Stage { fast_learning, gap, memorization };

/// Annotate each epoch with its training stage relative to the plateau.
/// Stages only advance (the first crossing locks the transition):
/// fast_learning while the smoothed loss sits above the band, gap while
/// inside it, memorization once below it.
inline std::vector<Stage> detect_stages(std::span<const double> loss_history,
                                        double threshold, double band = 0.15,
                                        std::size_t window = 3) {
  if (loss_history.empty()) throw InvalidInput("detect_stages: empty history");
  std::vector<Stage> stages(loss_history.size(), Stage::fast_learning);
  Stage current = Stage::fast_learning;
  for (std::size_t t = 0; t < loss_history.size(); ++t) {
    const double avg = smoothed_loss(loss_history, t, window);
    if (current == Stage::fast_learning && avg <= threshold + band) {
      current = avg >= threshold - band ? Stage::gap : Stage::memorization;
    } else if (current == Stage::gap && avg < threshold - band) {
      current = Stage::memorization;
    }
    stages[t] = current;
  }
  return stages;
}

}  // namespace gmbl
