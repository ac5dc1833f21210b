#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "gmbl/data.hpp"
#include "gmbl/errors.hpp"
#include "gmbl/losses.hpp"
#include "gmbl/metrics.hpp"
#include "gmbl/noise.hpp"
#include "gmbl/numerics.hpp"
#include "gmbl/schedule.hpp"

namespace gmbl {

// Feedforward net with an (m+1)-way softmax head, slot 0 being the
// rejection score. Backpropagation is manual; every batch reduction runs
// in a fixed order so a seeded run is bit-reproducible.

enum class Activation { relu, tanh };

struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input -> hidden... -> m+1
  Activation activation = Activation::relu;
  double init_scale = 1.0;  // multiplies the He factor sqrt(2 / fan_in)

  void validate() const {
    if (layer_widths.size() < 2)
      throw InvalidInput("MlpSpec: need at least input and output widths");
    for (std::size_t w : layer_widths)
      if (w == 0) throw InvalidInput("MlpSpec: zero layer width");
    if (layer_widths.back() < 3)
      throw InvalidInput("MlpSpec: output width must be m+1 >= 3");
  }
};

enum class OptimizerKind { sgd, sgd_momentum, adaptive_moment };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 128;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidInput("OptimizerSpec: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw InvalidInput("OptimizerSpec: momentum must be in [0, 1)");
    if (batch_size < 1) throw InvalidInput("OptimizerSpec: batch_size must be >= 1");
  }
};

enum class LossKind { nll, gambler, lq };

/// Loss configuration for a training run. nll and lq never use the
/// rejection slot; gambler uses it unless mask_rejection is set, in which
/// case the rejection logit is frozen out of the softmax and the loss
/// coincides with nll (the lambda = m interpolation endpoint).
struct LossSpec {
  LossKind kind = LossKind::nll;
  double q = 0.7;
  bool mask_rejection = false;

  bool uses_rejection() const {
    return kind == LossKind::gambler && !mask_rejection;
  }
};

struct Layer {
  Matrix w;               // out x in, row-major
  std::vector<double> b;  // out
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(const MlpSpec& spec, Rng& rng) : spec_(spec) {
    spec.validate();
    layers_.resize(spec.layer_widths.size() - 1);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::size_t in = spec.layer_widths[l];
      const std::size_t out = spec.layer_widths[l + 1];
      layers_[l].w = Matrix(out, in);
      layers_[l].b.assign(out, 0.0);
      const double sigma = spec.init_scale * std::sqrt(2.0 / static_cast<double>(in));
      for (std::size_t i = 0; i < out * in; ++i)
        layers_[l].w.data()[i] = sigma * rng.gaussian();
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const { return spec_.layer_widths.front(); }
  std::size_t output_dim() const { return spec_.layer_widths.back(); }
  std::size_t num_classes() const { return output_dim() - 1; }

  bool all_finite() const {
    for (const Layer& l : layers_) {
      if (!l.w.all_finite()) return false;
      for (double v : l.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

namespace detail {

inline constexpr std::size_t kRowBlock = 32;

/// Y = X * W^T + b, blocked over rows of X.
inline void linear_forward(const Matrix& x, const Layer& layer, Matrix& y) {
  const std::size_t n = x.rows(), in = x.cols(), out = layer.w.rows();
  for (std::size_t r0 = 0; r0 < n; r0 += kRowBlock) {
    const std::size_t r1 = std::min(r0 + kRowBlock, n);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = layer.w.row(o);
      const double bias = layer.b[o];
      for (std::size_t r = r0; r < r1; ++r)
        y(r, o) = dot(x.row(r), wrow, in) + bias;
    }
  }
}

/// dX = dY * W, blocked so each weight row is reused across a row block.
inline void linear_backward_input(const Matrix& dy, const Layer& layer, Matrix& dx) {
  const std::size_t n = dy.rows(), out = layer.w.rows(), in = layer.w.cols();
  dx.set_zero();
  for (std::size_t r0 = 0; r0 < n; r0 += kRowBlock) {
    const std::size_t r1 = std::min(r0 + kRowBlock, n);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = layer.w.row(o);
      for (std::size_t r = r0; r < r1; ++r) {
        const double g = dy(r, o);
        if (g != 0.0) axpy(dx.row(r), g, wrow, in);
      }
    }
  }
}

/// dW += dY^T * X and db += column sums of dY.
inline void linear_backward_params(const Matrix& x, const Matrix& dy, Layer& grad) {
  const std::size_t n = x.rows(), in = x.cols(), out = dy.cols();
  for (std::size_t r0 = 0; r0 < n; r0 += kRowBlock) {
    const std::size_t r1 = std::min(r0 + kRowBlock, n);
    for (std::size_t o = 0; o < out; ++o) {
      double* wrow = grad.w.row(o);
      double bsum = 0.0;
      for (std::size_t r = r0; r < r1; ++r) {
        const double g = dy(r, o);
        bsum += g;
        if (g != 0.0) axpy(wrow, g, x.row(r), in);
      }
      grad.b[o] += bsum;
    }
  }
}

inline double activate(double v, Activation act) {
  return act == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
}

}  // namespace detail

/// Softmax over the m+1 head of one logits row. With the rejection slot
/// masked, normalization runs over the class slots only and slot 0 is 0.
inline PredictionVector head_softmax(const double* logits, std::size_t m_plus_1,
                                     bool mask_rejection) {
  PredictionVector pred;
  if (mask_rejection) {
    std::vector<double> s = softmax({logits + 1, m_plus_1 - 1});
    pred.class_probs = std::move(s);
    pred.rejection = 0.0;
  } else {
    std::vector<double> s = softmax({logits, m_plus_1});
    pred.rejection = s[0];
    pred.class_probs.assign(s.begin() + 1, s.end());
  }
  return pred;
}

/// Forward pass: one PredictionVector per batch row.
inline std::vector<PredictionVector> forward(const Mlp& net, const Matrix& batch,
                                             bool mask_rejection = false) {
  if (batch.cols() != net.input_dim())
    throw ShapeError("forward: batch column count != input width");
  const auto& layers = net.layers();
  Matrix cur = batch;
  Matrix next;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    next = Matrix(cur.rows(), layers[l].w.rows());
    detail::linear_forward(cur, layers[l], next);
    if (l + 1 < layers.size()) {
      for (std::size_t i = 0; i < next.size(); ++i)
        next.data()[i] = detail::activate(next.data()[i], net.spec().activation);
    }
    cur = std::move(next);
  }
  if (!cur.all_finite()) throw DivergenceError("forward: non-finite logits");
  std::vector<PredictionVector> out;
  out.reserve(cur.rows());
  for (std::size_t r = 0; r < cur.rows(); ++r)
    out.push_back(head_softmax(cur.row(r), cur.cols(), mask_rejection));
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

struct BatchGradients {
  std::vector<Layer> layers;  // same shapes as the net
  double mean_loss = 0.0;
};

namespace detail {

/// Gradient of the per-sample loss with respect to the head logits, written
/// into dz (length m+1). Returns the loss value.
inline double head_loss_grad(const double* logits, std::size_t m_plus_1,
                             std::size_t label, const LossSpec& loss,
                             double lambda, double* dz) {
  const std::size_t m = m_plus_1 - 1;
  if (label >= m) throw InvalidLabel("backward: label out of range");
  std::fill(dz, dz + m_plus_1, 0.0);

  if (loss.uses_rejection()) {
    const std::vector<double> s = softmax({logits, m_plus_1});
    const double target = s[label + 1] + s[0] / lambda;
    if (target <= kProbFloor) return -std::log(kProbFloor);  // flat, zero grad
    const double slab = s[label + 1];
    const double srej = s[0] / lambda;
    for (std::size_t k = 0; k < m_plus_1; ++k) {
      double dt = -(slab + srej) * s[k];
      if (k == label + 1) dt += slab;
      if (k == 0) dt += srej;
      dz[k] = -dt / target;
    }
    return -std::log(target);
  }

  // Masked head: softmax over class slots only; rejection logit gets no
  // gradient. Covers nll, lq and the masked-gambler endpoint (identical to
  // nll regardless of lambda).
  const std::vector<double> p = softmax({logits + 1, m});
  const double plab = p[label];
  switch (loss.kind) {
    case LossKind::lq: {
      const double pq = std::pow(std::max(plab, kProbFloor), loss.q);
      for (std::size_t k = 0; k < m; ++k)
        dz[k + 1] = pq * (p[k] - (k == label ? 1.0 : 0.0));
      return (1.0 - std::pow(plab, loss.q)) / loss.q;
    }
    case LossKind::nll:
    case LossKind::gambler: {
      if (plab <= kProbFloor) return -std::log(kProbFloor);
      for (std::size_t k = 0; k < m; ++k)
        dz[k + 1] = p[k] - (k == label ? 1.0 : 0.0);
      return -std::log(plab);
    }
  }
  throw Error("backward: unreachable loss kind");
}

}  // namespace detail

/// Gradients of the mean batch loss with respect to every parameter.
/// lambda_per_sample is consumed only by the unmasked gambler loss.
inline BatchGradients backward(const Mlp& net, const Matrix& batch,
                               const std::vector<std::size_t>& labels,
                               const LossSpec& loss,
                               const std::vector<double>& lambda_per_sample) {
  const std::size_t n = batch.rows();
  if (labels.size() != n) throw ShapeError("backward: labels size mismatch");
  if (loss.uses_rejection() && lambda_per_sample.size() != n)
    throw ShapeError("backward: lambda_per_sample size mismatch");
  if (batch.cols() != net.input_dim())
    throw ShapeError("backward: batch column count != input width");

  const auto& layers = net.layers();
  const std::size_t depth = layers.size();
  const Activation act = net.spec().activation;

  // Forward, caching activations.
  std::vector<Matrix> acts(depth + 1);  // acts[0] = input, acts[depth] = logits
  acts[0] = batch;
  for (std::size_t l = 0; l < depth; ++l) {
    acts[l + 1] = Matrix(n, layers[l].w.rows());
    detail::linear_forward(acts[l], layers[l], acts[l + 1]);
    if (l + 1 < depth) {
      for (std::size_t i = 0; i < acts[l + 1].size(); ++i)
        acts[l + 1].data()[i] = detail::activate(acts[l + 1].data()[i], act);
    }
  }
  if (!acts[depth].all_finite()) throw DivergenceError("backward: non-finite logits");

  BatchGradients grads;
  grads.layers.resize(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    grads.layers[l].w = Matrix(layers[l].w.rows(), layers[l].w.cols());
    grads.layers[l].b.assign(layers[l].b.size(), 0.0);
  }

  // Head gradient per sample, scaled by 1/n for the batch mean.
  const std::size_t width = net.output_dim();
  Matrix delta(n, width);
  double loss_sum = 0.0;
  std::vector<double> dz(width);
  for (std::size_t r = 0; r < n; ++r) {
    const double lambda = loss.uses_rejection() ? lambda_per_sample[r] : 0.0;
    loss_sum += detail::head_loss_grad(acts[depth].row(r), width, labels[r],
                                       loss, lambda, dz.data());
    double* drow = delta.row(r);
    for (std::size_t k = 0; k < width; ++k) drow[k] = dz[k] / static_cast<double>(n);
  }
  grads.mean_loss = loss_sum / static_cast<double>(n);
  if (!std::isfinite(grads.mean_loss))
    throw DivergenceError("backward: non-finite batch loss");

  // Backpropagate through the stack.
  Matrix cur_delta = std::move(delta);
  for (std::size_t l = depth; l-- > 0;) {
    detail::linear_backward_params(acts[l], cur_delta, grads.layers[l]);
    if (l == 0) break;
    Matrix prev_delta(n, layers[l].w.cols());
    detail::linear_backward_input(cur_delta, layers[l], prev_delta);
    // Activation derivative: acts[l] stores post-activation values.
    for (std::size_t i = 0; i < prev_delta.size(); ++i) {
      const double post = acts[l].data()[i];
      const double g = act == Activation::relu ? (post > 0.0 ? 1.0 : 0.0)
                                               : 1.0 - post * post;
      prev_delta.data()[i] *= g;
    }
    cur_delta = std::move(prev_delta);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer + training loop.
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(const MlpSpec& mspec, const OptimizerSpec& ospec, Rng& rng)
      : net_(mspec, rng), opt_(ospec) {
    opt_.validate();
    if (opt_.kind != OptimizerKind::sgd) {
      slot1_ = zeros_like();
      if (opt_.kind == OptimizerKind::adaptive_moment) slot2_ = zeros_like();
    }
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const OptimizerSpec& optimizer() const { return opt_; }
  std::size_t epoch() const { return epoch_; }

  void apply(const BatchGradients& grads) {
    ++step_;
    const double lr = opt_.learning_rate;
    auto& layers = net_.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].w.data(), grads.layers[l].w.data(), l, 0, layers[l].w.size(), lr);
      update(layers[l].b.data(), grads.layers[l].b.data(), l, 1, layers[l].b.size(), lr);
    }
  }

  void advance_epoch() { ++epoch_; }

 private:
  std::vector<Layer> zeros_like() const {
    std::vector<Layer> z(net_.layers().size());
    for (std::size_t l = 0; l < z.size(); ++l) {
      z[l].w = Matrix(net_.layers()[l].w.rows(), net_.layers()[l].w.cols());
      z[l].b.assign(net_.layers()[l].b.size(), 0.0);
    }
    return z;
  }

  void update(double* p, const double* g, std::size_t l, int which,
              std::size_t n, double lr) {
    switch (opt_.kind) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < n; ++i) p[i] -= lr * g[i];
        break;
      case OptimizerKind::sgd_momentum: {
        double* v = which == 0 ? slot1_[l].w.data() : slot1_[l].b.data();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = opt_.momentum * v[i] + g[i];
          p[i] -= lr * v[i];
        }
        break;
      }
      case OptimizerKind::adaptive_moment: {
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        double* m = which == 0 ? slot1_[l].w.data() : slot1_[l].b.data();
        double* v = which == 0 ? slot2_[l].w.data() : slot2_[l].b.data();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
        break;
      }
    }
  }

  Mlp net_;
  OptimizerSpec opt_;
  std::vector<Layer> slot1_;  // momentum / first moment
  std::vector<Layer> slot2_;  // second moment
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation and the per-epoch loop.
// ---------------------------------------------------------------------------

struct EvalAccumulator {
  double loss_clean = 0.0, loss_corrupt = 0.0;
  double rej_clean = 0.0, rej_corrupt = 0.0;
  std::size_t n_clean = 0, n_corrupt = 0;
  std::size_t correct = 0;
  std::size_t abstained = 0;
  std::size_t total = 0;
};

namespace detail {

inline double per_sample_lambda(const PredictionVector& pred,
                                const LambdaSchedule& sched, std::size_t epoch) {
  return schedule_lambda(pred, sched, epoch);
}

inline double eval_loss(const PredictionVector& pred, std::size_t label,
                        const LossSpec& loss, double lambda) {
  switch (loss.kind) {
    case LossKind::gambler:
      if (!loss.mask_rejection) return gambler_loss(pred, label, lambda);
      return nll_loss(pred.class_probs, label);
    case LossKind::nll:
      return nll_loss(pred.class_probs, label);
    case LossKind::lq:
      return lq_loss(pred.class_probs, label, loss.q);
  }
  throw Error("eval_loss: unreachable");
}

inline std::size_t argmax_class(const PredictionVector& pred) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < pred.class_probs.size(); ++j)
    if (pred.class_probs[j] > pred.class_probs[best]) best = j;
  return best;
}

inline bool is_abstaining(const PredictionVector& pred) {
  // Rejection slot is the argmax over the full m+1 head.
  const std::size_t c = argmax_class(pred);
  return pred.rejection > pred.class_probs[c];
}

}  // namespace detail

/// One evaluation pass with the clean/corrupt partition. Labels used for
/// loss and accuracy are the (possibly noisy) training labels; the mask
/// decides which bucket each sample falls into.
inline EvalAccumulator evaluate_partitioned(const Mlp& net, const Matrix& inputs,
                                            const std::vector<std::size_t>& labels,
                                            const std::vector<std::uint8_t>& mask,
                                            const LossSpec& loss,
                                            const LambdaSchedule& sched,
                                            std::size_t epoch,
                                            std::size_t batch_size = 256) {
  EvalAccumulator acc;
  acc.total = labels.size();
  const std::size_t dim = inputs.cols();
  for (std::size_t start = 0; start < labels.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, labels.size());
    Matrix chunk(stop - start, dim);
    std::copy(inputs.row(start), inputs.row(start) + (stop - start) * dim, chunk.data());
    const auto preds = forward(net, chunk, !loss.uses_rejection());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const std::size_t r = start + i;
      const PredictionVector& pred = preds[i];
      double lambda = 0.0;
      if (loss.uses_rejection()) lambda = detail::per_sample_lambda(pred, sched, epoch);
      const double l = detail::eval_loss(pred, labels[r], loss, lambda);
      const bool corrupt = !mask.empty() && mask[r] != 0;
      if (corrupt) {
        acc.loss_corrupt += l;
        acc.rej_corrupt += pred.rejection;
        ++acc.n_corrupt;
      } else {
        acc.loss_clean += l;
        acc.rej_clean += pred.rejection;
        ++acc.n_clean;
      }
      if (detail::argmax_class(pred) == labels[r]) ++acc.correct;
      if (detail::is_abstaining(pred)) ++acc.abstained;
    }
  }
  return acc;
}

/// Plain accuracy on a labeled set (argmax over class slots only).
inline double evaluate_accuracy(const Mlp& net, const Matrix& inputs,
                                const std::vector<std::size_t>& labels,
                                bool mask_rejection, std::size_t batch_size = 256) {
  std::size_t correct = 0;
  const std::size_t dim = inputs.cols();
  for (std::size_t start = 0; start < labels.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, labels.size());
    Matrix chunk(stop - start, dim);
    std::copy(inputs.row(start), inputs.row(start) + (stop - start) * dim, chunk.data());
    const auto preds = forward(net, chunk, mask_rejection);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (detail::argmax_class(preds[i]) == labels[start + i]) ++correct;
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// One shuffled optimization pass followed by full evaluation passes over
/// the training and test sets. Lambda statistics come from the update pass
/// (the values actually used); losses and rejection statistics come from a
/// deterministic end-of-epoch evaluation pass.
inline EpochRecord train_epoch(Trainer& trainer, const CorruptedDataset& train,
                               const Dataset& test, const LossSpec& loss,
                               const LambdaSchedule& sched, Rng& rng) {
  const std::size_t n = train.noisy_labels.size();
  if (train.inputs.rows() != n) throw ShapeError("train_epoch: inconsistent dataset");
  const std::size_t dim = train.inputs.cols();
  const std::size_t batch = trainer.optimizer().batch_size;
  const std::size_t epoch_index = trainer.epoch();  // 0-based during this pass

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  double lambda_sum = 0.0;
  double lambda_min = std::numeric_limits<double>::infinity();
  double lambda_max = -std::numeric_limits<double>::infinity();
  std::size_t lambda_count = 0;

  Matrix xb;
  std::vector<std::size_t> yb;
  std::vector<double> lb;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t stop = std::min(start + batch, n);
    const std::size_t bs = stop - start;
    xb = Matrix(bs, dim);
    yb.resize(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      const std::size_t r = order[start + i];
      std::copy(train.inputs.row(r), train.inputs.row(r) + dim, xb.row(i));
      yb[i] = train.noisy_labels[r];
    }

    lb.assign(bs, 0.0);
    if (loss.uses_rejection()) {
      // Detached forward pass; no gradient flows through lambda.
      const auto preds = forward(trainer.net(), xb, false);
      for (std::size_t i = 0; i < bs; ++i) {
        lb[i] = detail::per_sample_lambda(preds[i], sched, epoch_index);
        lambda_sum += lb[i];
        lambda_min = std::min(lambda_min, lb[i]);
        lambda_max = std::max(lambda_max, lb[i]);
        ++lambda_count;
      }
    }

    const BatchGradients grads = backward(trainer.net(), xb, yb, loss, lb);
    trainer.apply(grads);
  }
  trainer.advance_epoch();
  if (!trainer.net().all_finite())
    throw DivergenceError("train_epoch: non-finite parameters after update");

  const EvalAccumulator acc =
      evaluate_partitioned(trainer.net(), train.inputs, train.noisy_labels,
                           train.corrupt_mask, loss, sched, trainer.epoch());

  EpochRecord rec;
  rec.epoch = trainer.epoch();
  const double total_loss = acc.loss_clean + acc.loss_corrupt;
  rec.train_loss_total = total_loss / static_cast<double>(acc.total);
  rec.train_loss_clean =
      acc.n_clean ? acc.loss_clean / static_cast<double>(acc.n_clean) : 0.0;
  rec.train_loss_corrupt =
      acc.n_corrupt ? acc.loss_corrupt / static_cast<double>(acc.n_corrupt) : 0.0;
  rec.train_acc = static_cast<double>(acc.correct) / static_cast<double>(acc.total);
  rec.rejection_mean_clean =
      acc.n_clean ? acc.rej_clean / static_cast<double>(acc.n_clean) : 0.0;
  rec.rejection_mean_corrupt =
      acc.n_corrupt ? acc.rej_corrupt / static_cast<double>(acc.n_corrupt) : 0.0;
  rec.abstain_fraction =
      static_cast<double>(acc.abstained) / static_cast<double>(acc.total);
  rec.test_acc = evaluate_accuracy(trainer.net(), test.inputs, test.labels,
                                   !loss.uses_rejection());
  if (lambda_count > 0) {
    rec.lambda_mean = lambda_sum / static_cast<double>(lambda_count);
    rec.lambda_min = lambda_min;
    rec.lambda_max = lambda_max;
  }
  if (!std::isfinite(rec.train_loss_total))
    throw DivergenceError("train_epoch: non-finite training loss");
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "GMBL", version u32, layer count u32, widths u32...,
// then per layer the weight matrix (row-major) and bias as little-endian
// 64-bit floats.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline void write_f64_le(std::ostream& out, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("checkpoint: truncated file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Mlp& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write("GMBL", 4);
  detail::write_u32_le(out, kCheckpointVersion);
  const auto& widths = net.spec().layer_widths;
  detail::write_u32_le(out, static_cast<std::uint32_t>(widths.size()));
  for (std::size_t w : widths) detail::write_u32_le(out, static_cast<std::uint32_t>(w));
  for (const Layer& l : net.layers()) {
    for (std::size_t i = 0; i < l.w.size(); ++i) detail::write_f64_le(out, l.w.data()[i]);
    for (double v : l.b) detail::write_f64_le(out, v);
  }
  if (!out) throw IoError("save_checkpoint: write failed");
}

/// Load parameters into a net with a matching spec.
inline void load_checkpoint(const std::string& path, Mlp& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GMBL")
    throw FormatError("load_checkpoint: bad magic");
  if (detail::read_u32_le(in) != kCheckpointVersion)
    throw FormatError("load_checkpoint: unsupported version");
  const std::uint32_t n_widths = detail::read_u32_le(in);
  const auto& widths = net.spec().layer_widths;
  if (n_widths != widths.size())
    throw ConsistencyError("load_checkpoint: layer count mismatch");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (detail::read_u32_le(in) != widths[i])
      throw ConsistencyError("load_checkpoint: width mismatch");
  }
  for (Layer& l : net.layers()) {
    for (std::size_t i = 0; i < l.w.size(); ++i) l.w.data()[i] = detail::read_f64_le(in);
    for (double& v : l.b) v = detail::read_f64_le(in);
  }
}

}  // namespace gmbl
