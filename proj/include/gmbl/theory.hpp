#pragma once

#include <algorithm>
#include <cmath>

#include "gmbl/errors.hpp"
#include "gmbl/losses.hpp"

namespace gmbl {

// Closed forms for gambler's-loss training under symmetric label noise:
// learnability threshold, optimal predictions, generalization gap, and the
// mean-field training-loss plateau.

/// (p, a, lambda) triple: label-smoothing parameter, clean rate, payoff.
struct TheoryPoint {
  double p = 1.0;
  double a = 1.0;
  double lambda = 2.0;

  void validate() const {
    if (!(p > 0.5) || p > 1.0) throw InvalidInput("TheoryPoint: p must be in (0.5, 1]");
    if (!(a > 0.5) || a > 1.0) throw InvalidInput("TheoryPoint: a must be in (0.5, 1]");
    if (!(lambda > 1.0)) throw InvalidInput("TheoryPoint: lambda must be > 1");
  }
};

/// Binary Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("entropy: p must be in [0,1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
  return h;
}

/// Expected cross-entropy of predicting q_pred on a point with smoothed
/// label p under clean rate a (noise flips the target with probability 1-a).
inline double generalization_error(double q_pred, double p, double a) {
  if (!(q_pred > 0.0 && q_pred < 1.0))
    throw DivergenceError("generalization_error: q_pred in {0,1} diverges");
  if (!(p >= 0.0 && p <= 1.0) || !(a >= 0.0 && a <= 1.0))
    throw InvalidInput("generalization_error: p, a must be in [0,1]");
  const double lq = std::log(q_pred);
  const double l1q = std::log(1.0 - q_pred);
  return -a * (p * lq + (1.0 - p) * l1q) - (1.0 - a) * (p * l1q + (1.0 - p) * lq);
}

/// A point is learnable iff lambda >= 1/p; the boundary is assigned to the
/// learnable branch, where the optimum degenerates continuously to p* = 0.
inline bool is_learnable(double p, double lambda) {
  if (!(p > 0.5) || p > 1.0) throw InvalidInput("is_learnable: p must be in (0.5, 1]");
  if (!(lambda > 1.0)) throw InvalidInput("is_learnable: lambda must be > 1");
  return lambda >= 1.0 / p;
}

struct OptimalPrediction {
  double p_star = 0.0;
  double f0_star = 0.0;
};

/// Optimal prediction on a learnable point: p* = (p lambda - 1)/(lambda - 1),
/// f0* = lambda (1-p)/(lambda - 1); remaining classes get zero mass.
inline OptimalPrediction optimal_prediction(double p, double lambda) {
  if (!is_learnable(p, lambda))
    throw NotLearnable(
        "optimal_prediction: lambda < 1/p; the optimum abstains entirely "
        "(f0 = 1, loss = log lambda)");
  const double p_star = (p * lambda - 1.0) / (lambda - 1.0);
  const double f0_star = lambda * (1.0 - p) / (lambda - 1.0);
  return {p_star, f0_star};
}

/// Maximum per-point prediction entropy over the learnable subset: H(1/lambda).
inline double complexity_bound(double lambda) {
  if (!(lambda > 1.0) || lambda > 2.0)
    throw InvalidInput("complexity_bound: lambda must be in (1, 2]");
  return entropy(1.0 / lambda);
}

/// Generalization-error reduction of the gambler optimum over the plain
/// cross-entropy optimum, in the p -> 1 limit: (1-a) log(lambda/(lambda-1)).
/// The boundary a = 0.5 is accepted (the r = 0.5 benchmark setting).
inline double generalization_gap(double a, double lambda) {
  if (!(a >= 0.5) || a > 1.0) throw InvalidInput("generalization_gap: a must be in [0.5, 1]");
  if (!(lambda > 1.0)) throw InvalidInput("generalization_gap: lambda must be > 1");
  return (1.0 - a) * std::log(lambda / (lambda - 1.0));
}

/// First-order approximation of the gap at finite p (valid for 1-p << 1):
/// (1-a) p / (lambda - 1).
inline double perturbative_gap(double p, double a, double lambda) {
  if (!(lambda > 1.0)) throw InvalidInput("perturbative_gap: lambda must be > 1");
  return (1.0 - a) * p / (lambda - 1.0);
}

/// Mean-field training loss at prediction p_hat with clean rate a:
///   -a log(p_hat + (1-p_hat)/lambda) - (1-a) log((1-p_hat)/lambda).
inline double mean_field_loss(double p_hat, double a, double lambda) {
  const double a1 = std::max(p_hat + (1.0 - p_hat) / lambda, kProbFloor);
  const double a2 = std::max((1.0 - p_hat) / lambda, kProbFloor);
  double loss = -a * std::log(a1);
  if (a < 1.0) loss -= (1.0 - a) * std::log(a2);
  return loss;
}

struct PlateauEstimate {
  double threshold = 0.0;
  double clean_rate = 1.0;
  double lambda = 2.0;
};

/// Minimum of the mean-field loss: H(a) + (1-a) log(lambda - 1). The
/// training loss plateaus here during the gap stage. The boundary a = 0.5
/// is accepted: it is the r = 0.5 benchmark setting.
inline PlateauEstimate plateau_threshold(double a, double lambda) {
  if (!(a >= 0.5) || a > 1.0) throw InvalidInput("plateau_threshold: a must be in [0.5, 1]");
  if (!(lambda > 1.0)) throw InvalidInput("plateau_threshold: lambda must be > 1");
  return {entropy(a) + (1.0 - a) * std::log(lambda - 1.0), a, lambda};
}

}  // namespace gmbl
