#pragma once

#include <cstdint>
#include <vector>

#include "gmbl/errors.hpp"
#include "gmbl/numerics.hpp"

namespace gmbl {

enum class NoiseKind { symmetric, pairflip };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::symmetric;
  double rate = 0.0;  // corruption rate r; clean rate a = 1 - r
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == NoiseKind::symmetric) {
      if (rate < 0.0 || rate > 1.0)
        throw InvalidRate("NoiseSpec: symmetric rate must be in [0, 1]");
    } else {
      if (rate < 0.0 || rate >= 0.5)
        throw InvalidRate("NoiseSpec: pairflip rate must be in [0, 0.5)");
    }
  }
};

/// A labeled training set with ground-truth corruption bookkeeping.
struct CorruptedDataset {
  Matrix inputs;
  std::vector<std::size_t> noisy_labels;
  std::vector<std::size_t> clean_labels;
  std::vector<std::uint8_t> corrupt_mask;  // 1 where noisy != clean
};

struct InjectedLabels {
  std::vector<std::size_t> noisy_labels;
  std::vector<std::uint8_t> corrupt_mask;
};

/// With probability rate, replace each label by a uniform draw over the
/// OTHER m-1 classes, so rate equals the actual mislabel probability.
inline InjectedLabels inject_symmetric(const std::vector<std::size_t>& labels,
                                       std::size_t m, const NoiseSpec& spec) {
  if (m < 2) throw InvalidInput("inject_symmetric: need m >= 2");
  if (spec.kind != NoiseKind::symmetric)
    throw InvalidInput("inject_symmetric: spec.kind must be symmetric");
  spec.validate();
  for (std::size_t y : labels) {
    if (y >= m) throw InvalidLabel("inject_symmetric: label out of range");
  }

  Rng rng(spec.seed);
  InjectedLabels out;
  out.noisy_labels = labels;
  out.corrupt_mask.assign(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (rng.uniform() < spec.rate) {
      std::size_t draw = static_cast<std::size_t>(rng.below(m - 1));
      if (draw >= labels[i]) ++draw;  // skip the clean class
      out.noisy_labels[i] = draw;
      out.corrupt_mask[i] = 1;
    }
  }
  return out;
}

/// With probability rate, replace label i by (i+1) mod m.
inline InjectedLabels inject_pairflip(const std::vector<std::size_t>& labels,
                                      std::size_t m, const NoiseSpec& spec) {
  if (m < 2) throw InvalidInput("inject_pairflip: need m >= 2");
  if (spec.kind != NoiseKind::pairflip)
    throw InvalidInput("inject_pairflip: spec.kind must be pairflip");
  spec.validate();
  for (std::size_t y : labels) {
    if (y >= m) throw InvalidLabel("inject_pairflip: label out of range");
  }

  Rng rng(spec.seed);
  InjectedLabels out;
  out.noisy_labels = labels;
  out.corrupt_mask.assign(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (rng.uniform() < spec.rate) {
      out.noisy_labels[i] = (labels[i] + 1) % m;
      out.corrupt_mask[i] = 1;
    }
  }
  return out;
}

inline InjectedLabels inject(const std::vector<std::size_t>& labels, std::size_t m,
                             const NoiseSpec& spec) {
  return spec.kind == NoiseKind::symmetric ? inject_symmetric(labels, m, spec)
                                           : inject_pairflip(labels, m, spec);
}

}  // namespace gmbl
