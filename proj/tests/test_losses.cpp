#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gmbl/losses.hpp"
#include "gmbl/numerics.hpp"

using namespace gmbl;

namespace {

PredictionVector random_prediction(Rng& rng, std::size_t m) {
  PredictionVector pred;
  pred.class_probs.resize(m);
  std::vector<double> raw(m + 1);
  double sum = 0.0;
  for (double& v : raw) {
    v = -std::log(std::max(rng.uniform(), 1e-300));
    sum += v;
  }
  pred.rejection = raw[0] / sum;
  for (std::size_t j = 0; j < m; ++j) pred.class_probs[j] = raw[j + 1] / sum;
  return pred;
}

/// Central finite differences of gambler_loss(softmax(logits)) w.r.t. logits.
std::vector<double> fd_gambler_grad(const std::vector<double>& logits,
                                    std::size_t label, double lambda,
                                    double step = 1e-5) {
  const std::size_t m = logits.size() - 1;
  auto loss_at = [&](const std::vector<double>& z) {
    const std::vector<double> s = softmax(z);
    PredictionVector pred;
    pred.rejection = s[0];
    pred.class_probs.assign(s.begin() + 1, s.end());
    return gambler_loss(pred, label, lambda);
  };
  std::vector<double> grad(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    std::vector<double> hi = logits, lo = logits;
    hi[k] += step;
    lo[k] -= step;
    grad[k] = (loss_at(hi) - loss_at(lo)) / (2.0 * step);
  }
  (void)m;
  return grad;
}

}  // namespace

TEST_CASE("nll loss values") {
  CHECK(nll_loss(std::vector<double>{1.0, 0.0}, 0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(nll_loss(std::vector<double>{0.5, 0.5}, 1) ==
        Catch::Approx(0.6931471805599453).epsilon(1e-12));
  CHECK(nll_loss(std::vector<double>{0.25, 0.75}, 0) ==
        Catch::Approx(1.3862943611198906).epsilon(1e-12));
  CHECK_THROWS_AS(nll_loss(std::vector<double>{0.5, 0.5}, 2), InvalidLabel);
  // Clamp keeps the corrupted one-hot case finite.
  CHECK(std::isfinite(nll_loss(std::vector<double>{0.0, 1.0}, 0)));
}

TEST_CASE("gambler loss values") {
  PredictionVector perfect{{1.0, 0.0}, 0.0};
  CHECK(gambler_loss(perfect, 0, 1.5) == Catch::Approx(0.0).margin(1e-12));

  PredictionVector abstain{{0.0, 0.0}, 1.0};
  CHECK(gambler_loss(abstain, 0, 1.5) == Catch::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK(gambler_loss(abstain, 1, 1.9) == Catch::Approx(std::log(1.9)).epsilon(1e-12));

  // Theorem-2 optimum at p = 0.9, lambda = 5: -ln(0.875 + 0.125/5) = -ln 0.9.
  PredictionVector opt{{0.875, 0.0}, 0.125};
  opt.class_probs.resize(5, 0.0);
  CHECK(gambler_loss(opt, 0, 5.0) ==
        Catch::Approx(0.10536051565782630).epsilon(1e-10));

  CHECK_THROWS_AS(gambler_loss(perfect, 0, 1.0), InvalidHyperparameter);
  CHECK_THROWS_AS(gambler_loss(perfect, 0, 2.5), InvalidHyperparameter);
  CHECK_THROWS_AS(gambler_loss(perfect, 5, 1.5), InvalidLabel);
}

TEST_CASE("gambler reduces to nll at zero rejection") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.below(6);
    PredictionVector pred = random_prediction(rng, m);
    // Move the rejection mass onto the classes.
    const double scale = 1.0 / (1.0 - pred.rejection);
    for (double& v : pred.class_probs) v *= scale;
    pred.rejection = 0.0;
    const std::size_t label = rng.below(m);
    const double lambda = rng.uniform(1.0 + 1e-6, static_cast<double>(m));
    REQUIRE(std::abs(gambler_loss(pred, label, lambda) -
                     nll_loss(pred.class_probs, label)) < 1e-12);
  }
}

TEST_CASE("gambler loss is non-decreasing in lambda when rejecting") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.below(6);
    const PredictionVector pred = random_prediction(rng, m);
    const std::size_t label = rng.below(m);
    double l1 = rng.uniform(1.0 + 1e-6, static_cast<double>(m));
    double l2 = rng.uniform(1.0 + 1e-6, static_cast<double>(m));
    if (l1 > l2) std::swap(l1, l2);
    REQUIRE(gambler_loss(pred, label, l2) >= gambler_loss(pred, label, l1) - 1e-12);
  }
}

TEST_CASE("gambler gradient matches finite differences") {
  // Uniform logits spot case.
  {
    const std::vector<double> logits{0.0, 0.0, 0.0};
    const auto grad = gambler_loss_grad(logits, 1, 2.0);
    const auto fd = fd_gambler_grad(logits, 1, 2.0);
    for (std::size_t k = 0; k < logits.size(); ++k)
      CHECK(grad[k] == Catch::Approx(fd[k]).margin(1e-6));
  }

  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.below(5);
    std::vector<double> logits(m + 1);
    for (double& v : logits) v = rng.uniform(-4.0, 4.0);
    const std::size_t label = rng.below(m);
    const double lambda = rng.uniform(1.0 + 1e-3, static_cast<double>(m));
    const auto grad = gambler_loss_grad(logits, label, lambda);
    const auto fd = fd_gambler_grad(logits, label, lambda);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double denom = std::max({std::abs(fd[k]), std::abs(grad[k]), 1e-8});
      REQUIRE(std::abs(grad[k] - fd[k]) / denom < 1e-4);
    }
  }
}

TEST_CASE("gambler gradient saturates at extremes") {
  // Logits heavily favoring the true class: near-zero gradient.
  std::vector<double> confident{-20.0, 20.0, -20.0};
  auto grad = gambler_loss_grad(confident, 0, 1.8);
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  CHECK(std::sqrt(norm) < 1e-3);

  // Rejection-saturated softmax: the gradient vanishes, freezing learning.
  std::vector<double> rejecting{25.0, -25.0, -25.0};
  grad = gambler_loss_grad(rejecting, 0, 1.5);
  const auto fd = fd_gambler_grad(rejecting, 0, 1.5);
  for (std::size_t k = 0; k < grad.size(); ++k) {
    CHECK(std::abs(grad[k]) < 1e-6);
    CHECK(grad[k] == Catch::Approx(fd[k]).margin(1e-6));
  }
}

TEST_CASE("binary gambler point loss") {
  CHECK(binary_gambler_point_loss(1.0, 1.0, 0.0, 1.5) == Catch::Approx(0.0).margin(1e-12));
  CHECK(binary_gambler_point_loss(0.6, 0.0, 1.0, 1.5) ==
        Catch::Approx(0.40546510810816438).epsilon(1e-12));

  // The analytic optimum value equals the simplex enumeration minimum.
  // Zero wrong-class mass at the optimum requires lambda <= m = 2, so the
  // probe stays inside that range; p* = 0.775, f0* = 0.225 at lambda 1.8.
  const SimplexMin numeric = minimize_simplex(
      [](std::span<const double> x) {
        return binary_gambler_point_loss(0.9, x[0], x[2], 1.8);
      },
      3, 100);
  CHECK(binary_gambler_point_loss(0.9, 0.775, 0.225, 1.8) ==
        Catch::Approx(numeric.min).margin(1e-6));

  CHECK_THROWS_AS(binary_gambler_point_loss(1.5, 0.5, 0.0, 1.5), InvalidInput);
  CHECK_THROWS_AS(binary_gambler_point_loss(0.9, 0.8, 0.3, 1.5), InvalidInput);
  CHECK_THROWS_AS(binary_gambler_point_loss(0.9, 0.5, 0.1, 1.0), InvalidHyperparameter);
}

TEST_CASE("lq loss values") {
  CHECK(lq_loss(std::vector<double>{1.0, 0.0}, 0, 0.7) == Catch::Approx(0.0).margin(1e-12));
  CHECK(lq_loss(std::vector<double>{0.5, 0.5}, 0, 1.0) == Catch::Approx(0.5).epsilon(1e-12));
  // (1 - 0.5^0.7)/0.7 via the power/exp identity 0.5^0.7 = e^{0.7 ln 0.5}.
  const double expected = (1.0 - std::exp(0.7 * std::log(0.5))) / 0.7;
  CHECK(expected == Catch::Approx(0.54918256189648837).epsilon(1e-12));
  CHECK(lq_loss(std::vector<double>{0.5, 0.5}, 0, 0.7) == Catch::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(lq_loss(std::vector<double>{0.5, 0.5}, 0, 0.0), InvalidHyperparameter);
  CHECK_THROWS_AS(lq_loss(std::vector<double>{0.5, 0.5}, 0, 1.2), InvalidHyperparameter);
}

TEST_CASE("zero mass on wrong classes at the optimum") {
  // Appendix A: enumeration over the 3-simplex never puts more than a grid
  // step of mass on the wrong class, learnable or not.
  Rng rng(24);
  for (int trial = 0; trial < 25; ++trial) {
    const double p = rng.uniform(0.55, 0.99);
    const double lambda = rng.uniform(1.05, 1.95);
    const SimplexMin best = minimize_simplex(
        [&](std::span<const double> x) {
          return binary_gambler_point_loss(p, x[0], x[2], lambda);
        },
        3, 100);
    REQUIRE(best.argmin[1] < 0.01);
  }
}

TEST_CASE("prediction vector validation") {
  PredictionVector ok{{0.4, 0.3}, 0.3};
  CHECK_NOTHROW(ok.validate());
  PredictionVector bad_sum{{0.4, 0.3}, 0.2};
  CHECK_THROWS_AS(bad_sum.validate(), InvalidInput);
  PredictionVector negative{{-0.1, 0.8}, 0.3};
  CHECK_THROWS_AS(negative.validate(), InvalidInput);

  GamblerConfig cfg{1.5, 2, ScheduleMode::fixed};
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = 2.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidHyperparameter);
  cfg = GamblerConfig{0.5, 1, ScheduleMode::fixed};
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}
