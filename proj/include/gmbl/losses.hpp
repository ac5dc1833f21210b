#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gmbl/errors.hpp"
#include "gmbl/numerics.hpp"

namespace gmbl {

/// Floor applied to every probability before it enters a log. Keeps losses
/// finite on corrupted one-hot targets. Gradients are zeroed at clamped
/// points (the loss surface is flat there).
inline constexpr double kProbFloor = 1e-12;

enum class ScheduleMode { fixed, euc, exp };

// ---------------------------------------------------------------------------
// Prediction over m classes plus the rejection slot.
// ---------------------------------------------------------------------------

struct PredictionVector {
  std::vector<double> class_probs;  // slots 1..m of the softmax head
  double rejection = 0.0;           // slot 0

  std::size_t num_classes() const { return class_probs.size(); }

  void validate() const {
    if (class_probs.empty()) throw InvalidInput("PredictionVector: no classes");
    double sum = rejection;
    if (rejection < 0.0) throw InvalidInput("PredictionVector: negative rejection");
    for (double p : class_probs) {
      if (p < 0.0) throw InvalidInput("PredictionVector: negative class prob");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw InvalidInput("PredictionVector: class_probs + rejection must sum to 1");
  }
};

struct GamblerConfig {
  double lambda = 2.0;
  std::size_t num_classes = 2;
  ScheduleMode schedule = ScheduleMode::fixed;

  void validate() const {
    if (num_classes < 2) throw InvalidInput("GamblerConfig: num_classes must be >= 2");
    if (schedule == ScheduleMode::fixed) {
      if (!(lambda > 1.0) || lambda > static_cast<double>(num_classes))
        throw InvalidHyperparameter("GamblerConfig: fixed lambda must be in (1, m]");
    }
  }
};

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

/// Cross-entropy on an m-way prediction (no rejection slot).
inline double nll_loss(std::span<const double> pred, std::size_t label) {
  if (label >= pred.size()) throw InvalidLabel("nll_loss: label out of range");
  return -std::log(std::max(pred[label], kProbFloor));
}

/// Gambler's loss -log(f_label + f_0 / lambda).
inline double gambler_loss(const PredictionVector& pred, std::size_t label,
                           double lambda) {
  const std::size_t m = pred.num_classes();
  if (label >= m) throw InvalidLabel("gambler_loss: label out of range");
  if (!(lambda > 1.0) || lambda > static_cast<double>(m))
    throw InvalidHyperparameter("gambler_loss: lambda must be in (1, m]");
  const double arg = pred.class_probs[label] + pred.rejection / lambda;
  return -std::log(std::max(arg, kProbFloor));
}

/// Analytic gradient of gambler_loss composed with a softmax head over m+1
/// logits (slot 0 = rejection, slot j+1 = class j).
inline std::vector<double> gambler_loss_grad(std::span<const double> logits,
                                             std::size_t label, double lambda) {
  if (logits.size() < 3)
    throw InvalidInput("gambler_loss_grad: need at least m+1 = 3 logits");
  const std::size_t m = logits.size() - 1;
  if (label >= m) throw InvalidLabel("gambler_loss_grad: label out of range");
  if (!(lambda > 1.0) || lambda > static_cast<double>(m))
    throw InvalidHyperparameter("gambler_loss_grad: lambda must be in (1, m]");

  const std::vector<double> s = softmax(logits);
  const double target = s[label + 1] + s[0] / lambda;
  std::vector<double> grad(logits.size(), 0.0);
  if (target <= kProbFloor) return grad;  // clamped: flat region

  // d target / d z_k = s_{label+1} (delta - s_k) + (s_0/lambda)(delta0 - s_k)
  const double slab = s[label + 1];
  const double srej = s[0] / lambda;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double dt = -(slab + srej) * s[k];
    if (k == label + 1) dt += slab;
    if (k == 0) dt += srej;
    grad[k] = -dt / target;
  }
  return grad;
}

/// Pointwise binary gambler's loss with explicit (p_hat, f0) allocation:
///   -p log(p_hat + f0/lambda) - (1-p) log(1 - p_hat - f0 + f0/lambda).
/// Valid for any lambda > 1; the (1, m] restriction applies to the softmax
/// form, not to this analytic probe.
inline double binary_gambler_point_loss(double p, double p_hat, double f0,
                                        double lambda) {
  if (!(p >= 0.0 && p <= 1.0))
    throw InvalidInput("binary_gambler_point_loss: p must be in [0,1]");
  if (p_hat < 0.0 || f0 < 0.0 || p_hat + f0 > 1.0 + 1e-12)
    throw InvalidInput("binary_gambler_point_loss: need p_hat, f0 >= 0 and p_hat + f0 <= 1");
  if (!(lambda > 1.0))
    throw InvalidHyperparameter("binary_gambler_point_loss: lambda must be > 1");
  const double a1 = std::max(p_hat + f0 / lambda, kProbFloor);
  const double a2 = std::max(1.0 - p_hat - f0 + f0 / lambda, kProbFloor);
  return -p * std::log(a1) - (1.0 - p) * std::log(a2);
}

/// Generalized cross-entropy baseline: (1 - pred[label]^q) / q.
inline double lq_loss(std::span<const double> pred, std::size_t label, double q) {
  if (label >= pred.size()) throw InvalidLabel("lq_loss: label out of range");
  if (!(q > 0.0) || q > 1.0)
    throw InvalidHyperparameter("lq_loss: q must be in (0, 1]");
  return (1.0 - std::pow(pred[label], q)) / q;
}

}  // namespace gmbl
