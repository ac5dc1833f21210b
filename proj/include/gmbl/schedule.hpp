#pragma once

#include <cmath>
#include <optional>

#include "gmbl/errors.hpp"
#include "gmbl/losses.hpp"

namespace gmbl {

// Per-sample automatic payoff scheduling. Both rules map the current class
// mass (rejection excluded) into [1, m]: confident predictions pull lambda
// toward 1 (robustness), diffuse ones toward m (learning speed).

struct LambdaSchedule {
  ScheduleMode mode = ScheduleMode::fixed;
  std::optional<double> fixed_value;
  std::size_t warmup_epochs = 0;

  void validate(std::size_t num_classes) const {
    if (mode == ScheduleMode::fixed) {
      if (!fixed_value)
        throw InvalidInput("LambdaSchedule: fixed mode requires fixed_value");
      if (!(*fixed_value > 1.0) || *fixed_value > static_cast<double>(num_classes))
        throw InvalidHyperparameter("LambdaSchedule: fixed_value must be in (1, m]");
    }
  }
};

/// lambda_euc = (sum_j f_j)^2 / sum_k f_k^2, in [1, m] by Cauchy-Schwarz.
inline double lambda_euc(const PredictionVector& pred) {
  double s = 0.0, s2 = 0.0;
  for (double f : pred.class_probs) {
    s += f;
    s2 += f * f;
  }
  if (s <= 0.0)
    throw DegeneratePrediction("lambda_euc: all mass on rejection slot");
  return s * s / s2;
}

/// lambda_exp = exp(-sum_j f_j log f_j / sum_k f_k), with 0 log 0 = 0.
inline double lambda_exp(const PredictionVector& pred) {
  double s = 0.0, slog = 0.0;
  for (double f : pred.class_probs) {
    s += f;
    if (f > 0.0) slog += f * std::log(f);
  }
  if (s <= 0.0)
    throw DegeneratePrediction("lambda_exp: all mass on rejection slot");
  return std::exp(-slog / s);
}

struct JensenTriple {
  double euc = 0.0;
  double mid = 0.0;  // sum f / sum f^2; the expected single-round gain S_i
  double exp = 0.0;
};

/// The Jensen chain euc <= mid <= exp; mid is the intermediate quantity
/// 1 / E_f[f] from the expected-gain derivation.
inline JensenTriple jensen_ordering(const PredictionVector& pred) {
  double s = 0.0, s2 = 0.0;
  for (double f : pred.class_probs) {
    s += f;
    s2 += f * f;
  }
  if (s <= 0.0)
    throw DegeneratePrediction("jensen_ordering: all mass on rejection slot");
  return {s * s / s2, s / s2, lambda_exp(pred)};
}

/// Resolve the per-sample lambda for this epoch. Warmup epochs run at m
/// (the cross-entropy-like end of the interpolation); afterwards dispatch
/// on the schedule mode. Result is clamped into (1 + 1e-6, m].
inline double schedule_lambda(const PredictionVector& pred,
                              const LambdaSchedule& sched, std::size_t epoch) {
  const std::size_t m = pred.num_classes();
  sched.validate(m);
  const double m_real = static_cast<double>(m);
  double lambda = m_real;
  if (epoch >= sched.warmup_epochs) {
    switch (sched.mode) {
      case ScheduleMode::fixed:
        lambda = *sched.fixed_value;
        break;
      case ScheduleMode::euc:
      case ScheduleMode::exp: {
        double s = 0.0;
        for (double f : pred.class_probs) s += f;
        if (s <= 0.0) {
          lambda = m_real;  // degenerate all-rejection prediction
        } else {
          lambda = sched.mode == ScheduleMode::euc ? lambda_euc(pred)
                                                   : lambda_exp(pred);
        }
        break;
      }
    }
  }
  return std::min(std::max(lambda, 1.0 + 1e-6), m_real);
}

}  // namespace gmbl
