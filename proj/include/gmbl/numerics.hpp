#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmbl/errors.hpp"

namespace gmbl {

// ---------------------------------------------------------------------------
// Dense row-major matrix.
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Deterministic seeded randomness.
//
// Engine is std::mt19937_64 (bit-exact by the C++ standard). All derived
// draws below are implemented here rather than with std::*_distribution,
// whose output is implementation-defined; this keeps streams identical
// across standard libraries. Documented in the README as
// "mt19937_64 / 53-bit uniforms / Box-Muller normals / modulo bounded ints".
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  static constexpr const char* kAlgorithm =
      "mt19937_64+canonical53+boxmuller+modulo";

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo reduction; bias is below 2^-53 for
  /// the ranges used here.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InvalidInput("Rng::below: n must be positive");
    return engine_() % n;
  }

  /// Standard normal draw via Box-Muller. One spare value is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Fisher-Yates shuffle using this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Small dense kernels. Contiguous loops so the compiler can vectorize.
// ---------------------------------------------------------------------------

/// Eight fixed accumulator lanes: vectorizes without reassociation flags
/// and the summation order stays deterministic.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

/// y += alpha * x
inline void axpy(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Softmax.
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax: empty input");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

// ---------------------------------------------------------------------------
// Scalar minimization: 1024-point grid scan + golden-section refinement.
// Fully deterministic; used as the numeric oracle for the closed forms.
// ---------------------------------------------------------------------------

struct ScalarMin {
  double argmin = 0.0;
  double min = 0.0;
};

namespace detail {

inline ScalarMin golden_section(const std::function<double(double)>& f,
                                double a, double b, double tol) {
  static const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, f(x)};
}

}  // namespace detail

inline ScalarMin minimize_1d(const std::function<double(double)>& objective,
                             double lower, double upper, double tol) {
  if (!(lower < upper)) throw InvalidRange("minimize_1d: lower >= upper");
  if (!(tol > 0.0)) throw InvalidInput("minimize_1d: tol must be positive");

  constexpr std::size_t kGrid = 1024;
  const double h = (upper - lower) / static_cast<double>(kGrid);
  std::size_t best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= kGrid; ++i) {
    const double x = lower + h * static_cast<double>(i);
    const double v = objective(x);
    if (v < best_val) {
      best_val = v;
      best = i;
    }
  }
  const double a = lower + h * static_cast<double>(best > 0 ? best - 1 : 0);
  const double b = lower + h * static_cast<double>(best < kGrid ? best + 1 : kGrid);
  ScalarMin refined = detail::golden_section(objective, a, b, tol);
  if (best_val < refined.min) {
    refined = {lower + h * static_cast<double>(best), best_val};
  }
  return refined;
}

// ---------------------------------------------------------------------------
// Minimization over the probability simplex by exhaustive grid enumeration
// plus pairwise golden-section refinement. Feasible for k <= 4 only.
// ---------------------------------------------------------------------------

struct SimplexMin {
  std::vector<double> argmin;
  double min = 0.0;
};

using SimplexObjective = std::function<double(std::span<const double>)>;

namespace detail {

inline void enumerate_simplex(const SimplexObjective& f, std::vector<double>& point,
                              std::size_t slot, std::size_t remaining,
                              std::size_t resolution, SimplexMin& best) {
  const std::size_t k = point.size();
  if (slot == k - 1) {
    point[slot] = static_cast<double>(remaining) / static_cast<double>(resolution);
    const double v = f(point);
    if (v < best.min) {
      best.min = v;
      best.argmin = point;
    }
    return;
  }
  for (std::size_t units = 0; units <= remaining; ++units) {
    point[slot] = static_cast<double>(units) / static_cast<double>(resolution);
    enumerate_simplex(f, point, slot + 1, remaining - units, resolution, best);
  }
}

}  // namespace detail

inline SimplexMin minimize_simplex(const SimplexObjective& objective,
                                   std::size_t k, std::size_t resolution) {
  if (k < 1 || k > 4)
    throw UnsupportedDimension("minimize_simplex: supported for 1 <= k <= 4");
  if (resolution < 100)
    throw InvalidInput("minimize_simplex: resolution must be >= 100");

  SimplexMin best;
  best.min = std::numeric_limits<double>::infinity();
  std::vector<double> point(k, 0.0);
  detail::enumerate_simplex(objective, point, 0, resolution, resolution, best);

  // Pairwise mass-transfer refinement: repeatedly move mass between two
  // slots along a line minimized by golden section.
  std::vector<double> x = best.argmin;
  for (int sweep = 0; sweep < 24; ++sweep) {
    for (std::size_t i = 0; i + 1 < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        const double mass = x[i] + x[j];
        if (mass <= 0.0) continue;
        auto line = [&](double t) {
          std::vector<double> y = x;
          y[i] = t;
          y[j] = mass - t;
          return objective(y);
        };
        const ScalarMin m = minimize_1d(line, 0.0, mass, 1e-12);
        x[i] = m.argmin;
        x[j] = mass - m.argmin;
      }
    }
  }
  const double fx = objective(x);
  if (fx < best.min) {
    best.min = fx;
    best.argmin = x;
  }
  return best;
}

}  // namespace gmbl
