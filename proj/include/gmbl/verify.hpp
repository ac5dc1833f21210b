#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gmbl/losses.hpp"
#include "gmbl/numerics.hpp"
#include "gmbl/schedule.hpp"
#include "gmbl/theory.hpp"

namespace gmbl {

// Executable verification of the closed forms: every theorem is checked
// against an independent numeric oracle (grid + golden-section search, or
// exhaustive simplex enumeration). Each checker takes the formula under
// test as a parameter so a deliberately tampered formula can be shown to
// fail (mutation sanity).

struct VerifyCheck {
  std::string name;
  bool pass = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t count = 0;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;

  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

namespace verify {

/// Theorem 2: analytic p* vs the argmin of the pointwise binary loss with
/// zero mass on the wrong class (f0 = 1 - p_hat).
inline VerifyCheck theorem2_optimal_prediction(
    std::function<OptimalPrediction(double, double)> analytic = [](double p, double l) {
      return optimal_prediction(p, l);
    },
    std::size_t samples = 200, double tol = 1e-6) {
  VerifyCheck check{"theorem2_optimal_prediction", true, 0.0, tol, samples};
  Rng rng(20200317);
  for (std::size_t i = 0; i < samples; ++i) {
    const double p = rng.uniform(0.55, 1.0);
    const double lambda = rng.uniform(1.0 / p + 1e-3, 2.0);
    const auto pred = analytic(p, lambda);
    const ScalarMin numeric = minimize_1d(
        [&](double p_hat) {
          return binary_gambler_point_loss(p, p_hat, 1.0 - p_hat, lambda);
        },
        0.0, 1.0, 1e-10);
    check.max_error = std::max(check.max_error, std::abs(pred.p_star - numeric.argmin));
  }
  check.pass = check.max_error < tol;
  return check;
}

/// Theorem 1: below the learnability threshold the simplex optimum puts
/// all mass on the rejection slot and the minimum equals log(lambda).
inline VerifyCheck theorem1_abstention(std::size_t samples = 200, double tol = 1e-6) {
  VerifyCheck check{"theorem1_abstention", true, 0.0, tol, samples};
  Rng rng(20200318);
  double worst_mass = 1.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double lambda = rng.uniform(1.02, 1.95);
    const double p = rng.uniform(0.505, 1.0 / lambda - 1e-3);
    // Slots: (true class, wrong class, rejection).
    const SimplexMin numeric = minimize_simplex(
        [&](std::span<const double> x) {
          return binary_gambler_point_loss(p, x[0], x[2], lambda);
        },
        3, 100);
    worst_mass = std::min(worst_mass, numeric.argmin[2]);
    check.max_error = std::max(check.max_error, std::abs(numeric.min - std::log(lambda)));
  }
  check.pass = check.max_error < tol && worst_mass > 0.99;
  return check;
}

/// Theorem 4: the plateau formula vs the numeric minimum of the mean-field
/// loss over a (clean rate, lambda) grid, plus the r = 0.5, lambda = 9.99
/// spot value used by the early-stopping benchmark.
inline VerifyCheck theorem4_plateau(
    std::function<double(double, double)> analytic = [](double a, double l) {
      return plateau_threshold(a, l).threshold;
    },
    double tol = 1e-8) {
  VerifyCheck check{"theorem4_plateau", true, 0.0, tol, 20 * 20 + 1};
  for (std::size_t i = 0; i < 20; ++i) {
    const double a = 0.55 + 0.45 * static_cast<double>(i) / 19.0;
    for (std::size_t j = 0; j < 20; ++j) {
      const double lambda = 2.0 + 8.0 * static_cast<double>(j) / 19.0;
      const ScalarMin numeric = minimize_1d(
          [&](double p_hat) { return mean_field_loss(p_hat, a, lambda); }, 0.0, 1.0,
          1e-11);
      check.max_error = std::max(check.max_error, std::abs(analytic(a, lambda) - numeric.min));
    }
  }
  const double spot = std::abs(analytic(0.5, 9.99) - 1.7912036048017098);
  check.pass = check.max_error < tol && spot < 1e-6;
  check.max_error = std::max(check.max_error, spot);
  return check;
}

/// Theorem 3: the generalization gap formula vs the empirical difference of
/// generalization errors at p = 1 - 1e-6, plus exact zero at a = 1.
inline VerifyCheck theorem3_gap(
    std::function<double(double, double)> analytic = [](double a, double l) {
      return generalization_gap(a, l);
    },
    double tol = 1e-3) {
  VerifyCheck check{"theorem3_gap", true, 0.0, tol, 10 * 10};
  const double p = 1.0 - 1e-6;
  bool zero_at_clean = true;
  for (std::size_t i = 0; i < 10; ++i) {
    const double a = 0.55 + 0.45 * static_cast<double>(i) / 9.0;
    for (std::size_t j = 0; j < 10; ++j) {
      const double lambda = 1.1 + 8.89 * static_cast<double>(j) / 9.0;
      const double p_star = optimal_prediction(p, lambda).p_star;
      const double empirical =
          generalization_error(p, p, a) - generalization_error(p_star, p, a);
      check.max_error = std::max(check.max_error, std::abs(empirical - analytic(a, lambda)));
      if (analytic(1.0, lambda) != 0.0) zero_at_clean = false;
    }
  }
  check.pass = check.max_error < tol && zero_at_clean;
  return check;
}

/// Theorem 3 positivity: the gap is nonnegative and vanishes only at a = 1.
inline VerifyCheck theorem3_positivity(std::size_t samples = 1000) {
  VerifyCheck check{"theorem3_positivity", true, 0.0, 0.0, samples};
  Rng rng(20200319);
  for (std::size_t i = 0; i < samples; ++i) {
    const double a = rng.uniform(0.51, 0.999);
    const double lambda = rng.uniform(1.01, 10.0);
    if (!(generalization_gap(a, lambda) > 0.0)) check.pass = false;
  }
  if (generalization_gap(1.0, 3.0) != 0.0) check.pass = false;
  return check;
}

/// Corollary 1: H(p) <= H(1/lambda) for every learnable p >= 1/lambda.
inline VerifyCheck corollary1_complexity(std::size_t samples = 200, double tol = 1e-12) {
  VerifyCheck check{"corollary1_complexity", true, 0.0, tol, samples};
  Rng rng(20200320);
  for (std::size_t i = 0; i < samples; ++i) {
    const double lambda = rng.uniform(1.01, 2.0);
    const double bound = complexity_bound(lambda);
    for (int j = 0; j <= 50; ++j) {
      const double p = 1.0 / lambda + (1.0 - 1.0 / lambda) * j / 50.0;
      const double excess = entropy(p) - bound;
      check.max_error = std::max(check.max_error, excess);
    }
  }
  check.pass = check.max_error < tol;
  return check;
}

/// Appendix C: the perturbative form agrees with the exact gap to second
/// order in 1/(lambda - 1), and both vanish as lambda grows.
inline VerifyCheck perturbative_consistency(std::size_t samples = 200) {
  VerifyCheck check{"appendix_c_perturbative", true, 0.0, 0.0, samples};
  Rng rng(20200321);
  bool ok = true;
  for (std::size_t i = 0; i < samples; ++i) {
    const double a = rng.uniform(0.55, 1.0);
    const double lambda = rng.uniform(50.0, 1000.0);
    const double gap = generalization_gap(a, lambda);
    const double pert = perturbative_gap(1.0, a, lambda);
    const double budget = (1.0 - a) / ((lambda - 1.0) * (lambda - 1.0));
    check.max_error = std::max(check.max_error, std::abs(gap - pert));
    if (std::abs(gap - pert) > budget) ok = false;
  }
  if (perturbative_gap(0.99, 1.0, 2.0) != 0.0) ok = false;            // a = 1
  if (!(generalization_gap(0.8, 1e9) < 1e-8)) ok = false;             // lambda -> inf
  if (!(perturbative_gap(1.0, 0.8, 1e9) < 1e-8)) ok = false;
  check.pass = ok;
  return check;
}

/// Appendix E: lambda_euc <= lambda_mid <= lambda_exp on random predictions.
inline VerifyCheck jensen_chain(std::size_t samples = 10000, double tol = 1e-12) {
  VerifyCheck check{"jensen_ordering", true, 0.0, tol, samples};
  Rng rng(20200322);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.below(9));
    PredictionVector pred;
    pred.class_probs.resize(m);
    double sum = 0.0;
    std::vector<double> raw(m + 1);
    for (double& v : raw) {
      v = -std::log(std::max(rng.uniform(), 1e-300));
      sum += v;
    }
    for (std::size_t j = 0; j < m; ++j) pred.class_probs[j] = raw[j + 1] / sum;
    pred.rejection = raw[0] / sum;
    const JensenTriple t = jensen_ordering(pred);
    check.max_error =
        std::max({check.max_error, t.euc - t.mid, t.mid - t.exp});
  }
  check.pass = check.max_error < tol;
  return check;
}

/// Definition 1: sweeping lambda across 1/p flips learnability exactly once.
inline VerifyCheck learnability_boundary(std::size_t samples = 200) {
  VerifyCheck check{"learnability_boundary", true, 0.0, 0.0, samples};
  Rng rng(20200323);
  for (std::size_t i = 0; i < samples; ++i) {
    const double p = rng.uniform(0.51, 0.99);
    std::size_t flips = 0;
    bool prev = is_learnable(p, 1.0 + 1e-9);
    for (int j = 1; j <= 400; ++j) {
      const double lambda = 1.0 + 1e-9 + (2.0 / p) * j / 400.0;
      const bool cur = is_learnable(p, lambda);
      if (cur != prev) ++flips;
      prev = cur;
    }
    if (flips != 1 || !prev) check.pass = false;
  }
  return check;
}

}  // namespace verify

/// The full oracle suite backing the `verify-theory` CLI subcommand.
inline VerifyReport run_verify_theory() {
  VerifyReport report;
  report.checks.push_back(verify::theorem1_abstention());
  report.checks.push_back(verify::theorem2_optimal_prediction());
  report.checks.push_back(verify::theorem3_gap());
  report.checks.push_back(verify::theorem3_positivity());
  report.checks.push_back(verify::theorem4_plateau());
  report.checks.push_back(verify::corollary1_complexity());
  report.checks.push_back(verify::perturbative_consistency());
  report.checks.push_back(verify::jensen_chain());
  report.checks.push_back(verify::learnability_boundary());
  return report;
}

}  // namespace gmbl
