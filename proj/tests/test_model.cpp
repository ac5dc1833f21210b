#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "gmbl/data.hpp"
#include "gmbl/model.hpp"

using namespace gmbl;

namespace {

MlpSpec small_spec(std::vector<std::size_t> widths,
                   Activation act = Activation::relu) {
  MlpSpec spec;
  spec.layer_widths = std::move(widths);
  spec.activation = act;
  return spec;
}

Matrix random_batch(Rng& rng, std::size_t n, std::size_t dim, double scale = 1.0) {
  Matrix x(n, dim);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = scale * rng.gaussian();
  return x;
}

/// Finite-difference gradient of the mean batch loss for one layer's params.
double fd_param_grad(Mlp& net, const Matrix& batch,
                     const std::vector<std::size_t>& labels, const LossSpec& loss,
                     const std::vector<double>& lambdas, std::size_t layer,
                     bool weight, std::size_t index, double step = 1e-5) {
  double* p = weight ? net.layers()[layer].w.data() + index
                     : net.layers()[layer].b.data() + index;
  const double saved = *p;
  *p = saved + step;
  const double hi = backward(net, batch, labels, loss, lambdas).mean_loss;
  *p = saved - step;
  const double lo = backward(net, batch, labels, loss, lambdas).mean_loss;
  *p = saved;
  return (hi - lo) / (2.0 * step);
}

void check_full_gradient(const LossSpec& loss, Activation act, double lambda_value) {
  Rng rng(81);
  Mlp net(small_spec({2, 16, 3}, act), rng);
  const Matrix batch = random_batch(rng, 8, 2);
  std::vector<std::size_t> labels(8);
  for (auto& y : labels) y = rng.below(2);
  const std::vector<double> lambdas(8, lambda_value);

  const BatchGradients grads = backward(net, batch, labels, loss, lambdas);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (bool weight : {true, false}) {
      const std::size_t count =
          weight ? net.layers()[l].w.size() : net.layers()[l].b.size();
      for (std::size_t i = 0; i < count; ++i) {
        const double fd =
            fd_param_grad(net, batch, labels, loss, lambdas, l, weight, i);
        const double an = weight ? grads.layers[l].w.data()[i] : grads.layers[l].b[i];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        INFO("layer " << l << (weight ? " w" : " b") << "[" << i << "]");
        REQUIRE(std::abs(an - fd) / denom < 1e-4);
      }
    }
  }
}

}  // namespace

TEST_CASE("forward with zero parameters is uniform") {
  Rng rng(80);
  Mlp net(small_spec({4, 5, 3}), rng);
  for (Layer& l : net.layers()) {
    l.w.set_zero();
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  const Matrix batch = random_batch(rng, 3, 4);
  const auto preds = forward(net, batch);
  for (const PredictionVector& p : preds) {
    CHECK(p.rejection == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    for (double c : p.class_probs)
      CHECK(c == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("single layer forward equals direct softmax") {
  Rng rng(82);
  Mlp net(small_spec({4, 3}), rng);
  Matrix x(1, 4);
  x.set_zero();
  x(0, 2) = 1.0;  // one-hot input selects weight column 2
  const auto preds = forward(net, x);
  std::vector<double> logits(3);
  for (std::size_t o = 0; o < 3; ++o)
    logits[o] = net.layers()[0].w(o, 2) + net.layers()[0].b[o];
  const std::vector<double> expect = softmax(logits);
  CHECK(preds[0].rejection == Catch::Approx(expect[0]).epsilon(1e-13));
  CHECK(preds[0].class_probs[0] == Catch::Approx(expect[1]).epsilon(1e-13));
  CHECK(preds[0].class_probs[1] == Catch::Approx(expect[2]).epsilon(1e-13));
}

TEST_CASE("forward is deterministic and shape checked") {
  Rng rng(83);
  Mlp net(small_spec({3, 8, 4}), rng);
  const Matrix batch = random_batch(rng, 5, 3);
  const auto a = forward(net, batch);
  const auto b = forward(net, batch);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].rejection == b[i].rejection);
    REQUIRE(a[i].class_probs == b[i].class_probs);
  }
  const Matrix wrong = random_batch(rng, 5, 7);
  CHECK_THROWS_AS(forward(net, wrong), ShapeError);
}

TEST_CASE("backward matches finite differences for every loss and activation") {
  LossSpec gambler{LossKind::gambler, 0.7, false};
  LossSpec nll{LossKind::nll, 0.7, false};
  LossSpec lq{LossKind::lq, 0.7, false};
  LossSpec masked{LossKind::gambler, 0.7, true};
  for (Activation act : {Activation::relu, Activation::tanh}) {
    check_full_gradient(gambler, act, 1.7);
    check_full_gradient(nll, act, 0.0);
    check_full_gradient(lq, act, 0.0);
    check_full_gradient(masked, act, 2.0);
  }
}

TEST_CASE("gradients vanish at saturated optima") {
  Rng rng(84);
  Mlp net(small_spec({2, 3}), rng);
  // Bias drives all mass onto class 0 regardless of input.
  net.layers()[0].w.set_zero();
  net.layers()[0].b = {-30.0, 30.0, -30.0};
  Matrix x = random_batch(rng, 4, 2, 0.1);
  std::vector<std::size_t> labels(4, 0);
  const std::vector<double> lambdas(4, 1.8);

  LossSpec gambler{LossKind::gambler, 0.7, false};
  const BatchGradients at_opt = backward(net, x, labels, gambler, lambdas);
  double norm = 0.0;
  for (const Layer& l : at_opt.layers) {
    for (std::size_t i = 0; i < l.w.size(); ++i) norm += l.w.data()[i] * l.w.data()[i];
    for (double v : l.b) norm += v * v;
  }
  CHECK(std::sqrt(norm) < 1e-6);

  // Rejection-saturated head: learning on the point is frozen.
  net.layers()[0].b = {30.0, -30.0, -30.0};
  const BatchGradients rejecting = backward(net, x, labels, gambler, lambdas);
  norm = 0.0;
  for (const Layer& l : rejecting.layers) {
    for (std::size_t i = 0; i < l.w.size(); ++i) norm += l.w.data()[i] * l.w.data()[i];
    for (double v : l.b) norm += v * v;
  }
  CHECK(std::sqrt(norm) < 1e-6);
}

namespace {

CorruptedDataset make_train(const Dataset& ds) {
  CorruptedDataset train;
  train.inputs = ds.inputs;
  train.noisy_labels = ds.labels;
  train.clean_labels = ds.labels;
  train.corrupt_mask.assign(ds.labels.size(), 0);
  return train;
}

}  // namespace

TEST_CASE("train_epoch metrics and determinism") {
  Rng gen(85);
  Dataset all = generate_blobs(400, 2, 2, 6.0, gen);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset train_ds = detail::take_rows(all, idx, 0, 300);
  const Dataset test_ds = detail::take_rows(all, idx, 300, 400);
  const CorruptedDataset train = make_train(train_ds);

  OptimizerSpec opt;
  opt.batch_size = 32;
  opt.learning_rate = 0.05;
  LossSpec loss{LossKind::gambler, 0.7, false};
  LambdaSchedule sched{ScheduleMode::fixed, 1.9, 0};

  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    Trainer trainer(small_spec({2, 8, 3}), opt, rng);
    std::vector<EpochRecord> recs;
    for (int e = 0; e < 4; ++e)
      recs.push_back(train_epoch(trainer, train, test_ds, loss, sched, rng));
    return recs;
  };
  const auto a = run(7), b = run(7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].train_loss_total == b[i].train_loss_total);
    REQUIRE(a[i].test_acc == b[i].test_acc);
    REQUIRE(a[i].rejection_mean_clean == b[i].rejection_mean_clean);
  }

  // Clean dataset: the clean-subset loss is the total loss; lambda stats
  // reflect the fixed value.
  CHECK(a[0].train_loss_clean == Catch::Approx(a[0].train_loss_total));
  CHECK(a[0].train_loss_corrupt == 0.0);
  CHECK(a[0].lambda_mean == Catch::Approx(1.9));
  CHECK(a[0].lambda_min == Catch::Approx(1.9));
  CHECK(a[0].lambda_max == Catch::Approx(1.9));
}

TEST_CASE("frozen parameters give identical records across epochs") {
  Rng gen(86);
  Dataset all = generate_blobs(200, 2, 2, 6.0, gen);
  const CorruptedDataset train = make_train(all);

  OptimizerSpec opt;
  opt.learning_rate = 1e-300;  // effectively frozen
  opt.kind = OptimizerKind::sgd;
  opt.batch_size = 64;
  LossSpec loss{LossKind::nll, 0.7, false};
  LambdaSchedule sched{ScheduleMode::fixed, 2.0, 0};

  Rng rng(9);
  Trainer trainer(small_spec({2, 4, 3}), opt, rng);
  const EpochRecord r1 = train_epoch(trainer, train, all, loss, sched, rng);
  const EpochRecord r2 = train_epoch(trainer, train, all, loss, sched, rng);
  CHECK(r1.train_loss_total == Catch::Approx(r2.train_loss_total).epsilon(1e-12));
  CHECK(r1.train_acc == r2.train_acc);
  CHECK(r1.test_acc == r2.test_acc);
}

TEST_CASE("masked gambler at lambda = m reproduces the nll trajectory") {
  Rng gen(87);
  Dataset all = generate_blobs(600, 3, 2, 5.0, gen);
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset train_ds = detail::take_rows(all, idx, 0, 500);
  const Dataset test_ds = detail::take_rows(all, idx, 500, 600);
  const CorruptedDataset train = make_train(train_ds);

  OptimizerSpec opt;
  opt.batch_size = 50;
  opt.learning_rate = 0.02;

  auto run = [&](LossSpec loss, LambdaSchedule sched) {
    Rng rng(33);
    Trainer trainer(small_spec({2, 12, 4}), opt, rng);
    std::vector<double> losses;
    for (int e = 0; e < 5; ++e)
      losses.push_back(
          train_epoch(trainer, train, test_ds, loss, sched, rng).train_loss_total);
    return losses;
  };
  const auto masked = run(LossSpec{LossKind::gambler, 0.7, true},
                          LambdaSchedule{ScheduleMode::fixed, 3.0, 0});
  const auto plain_nll = run(LossSpec{LossKind::nll, 0.7, false},
                             LambdaSchedule{ScheduleMode::fixed, 3.0, 0});
  REQUIRE(masked.size() == plain_nll.size());
  for (std::size_t i = 0; i < masked.size(); ++i)
    REQUIRE(std::abs(masked[i] - plain_nll[i]) < 1e-10);
}

TEST_CASE("optimizers reduce the loss") {
  Rng gen(88);
  Dataset all = generate_blobs(300, 2, 2, 8.0, gen);
  const CorruptedDataset train = make_train(all);
  LossSpec loss{LossKind::nll, 0.7, false};
  LambdaSchedule sched{ScheduleMode::fixed, 2.0, 0};

  for (OptimizerKind kind :
       {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adaptive_moment}) {
    OptimizerSpec opt;
    opt.kind = kind;
    opt.learning_rate = kind == OptimizerKind::adaptive_moment ? 0.01 : 0.05;
    opt.batch_size = 32;
    Rng rng(12);
    Trainer trainer(small_spec({2, 8, 3}), opt, rng);
    double first = 0.0, last = 0.0;
    for (int e = 0; e < 8; ++e) {
      const EpochRecord rec = train_epoch(trainer, train, all, loss, sched, rng);
      if (e == 0) first = rec.train_loss_total;
      last = rec.train_loss_total;
    }
    INFO("optimizer " << static_cast<int>(kind));
    REQUIRE(last < first * 0.8);
  }
}

TEST_CASE("divergence raises an error") {
  Rng gen(89);
  Dataset all = generate_blobs(100, 2, 2, 4.0, gen);
  const CorruptedDataset train = make_train(all);
  OptimizerSpec opt;
  opt.learning_rate = 1e160;
  opt.batch_size = 16;
  LossSpec loss{LossKind::nll, 0.7, false};
  LambdaSchedule sched{ScheduleMode::fixed, 2.0, 0};
  Rng rng(13);
  Trainer trainer(small_spec({2, 8, 3}), opt, rng);
  bool threw = false;
  try {
    for (int e = 0; e < 20; ++e) train_epoch(trainer, train, all, loss, sched, rng);
  } catch (const DivergenceError&) {
    threw = true;
  }
  CHECK(threw);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(90);
  Mlp net(small_spec({3, 6, 4}), rng);
  const auto path =
      (std::filesystem::temp_directory_path() / "gmbl_ckpt_test.gmbl").string();
  save_checkpoint(path, net);

  Rng rng2(91);
  Mlp other(small_spec({3, 6, 4}), rng2);
  load_checkpoint(path, other);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (std::size_t i = 0; i < net.layers()[l].w.size(); ++i)
      REQUIRE(net.layers()[l].w.data()[i] == other.layers()[l].w.data()[i]);
    REQUIRE(net.layers()[l].b == other.layers()[l].b);
  }

  Rng rng3(92);
  Mlp wrong(small_spec({3, 7, 4}), rng3);
  CHECK_THROWS_AS(load_checkpoint(path, wrong), ConsistencyError);
}
