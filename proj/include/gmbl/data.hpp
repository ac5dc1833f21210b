#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gmbl/errors.hpp"
#include "gmbl/noise.hpp"
#include "gmbl/numerics.hpp"

namespace gmbl {

enum class DataSource { blobs, idx };

struct DatasetMeta {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t num_train = 0;
  std::size_t num_test = 0;
  std::size_t input_dim = 0;
  DataSource source = DataSource::blobs;
};

struct Dataset {
  Matrix inputs;                     // one row per sample
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic blobs: m isotropic unit-variance Gaussian clusters whose centers
// sit at mutual distance >= separation. Labels are laid out round-robin so
// class balance is exact up to +-1.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> blob_centers(std::size_t m, std::size_t dim,
                                                     double separation, Rng& rng) {
  std::vector<std::vector<double>> centers(m, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = rng.gaussian();
  if (m < 2) return centers;
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = centers[i][k] - centers[j][k];
        d2 += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  if (min_dist <= 0.0) throw InvalidInput("blob_centers: coincident centers");
  const double scale = separation / min_dist;
  for (auto& c : centers)
    for (double& v : c) v *= scale;
  return centers;
}

inline Dataset generate_blobs(std::size_t n, std::size_t m, std::size_t dim,
                              double separation, Rng& rng) {
  if (m < 2) throw InvalidInput("generate_blobs: need m >= 2");
  if (!(separation > 0.0)) throw InvalidInput("generate_blobs: separation must be > 0");

  const auto centers = blob_centers(m, dim, separation, rng);
  Dataset ds;
  ds.inputs = Matrix(n, dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % m;
    ds.labels[i] = y;
    double* row = ds.inputs.row(i);
    for (std::size_t k = 0; k < dim; ++k) row[k] = centers[y][k] + rng.gaussian();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) format. Magics and dimension sizes are big-endian; pixels are
// scaled into [0, 1] by /255 on load.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("idx: truncated file");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("load_idx: cannot open " + images_path);
  if (detail::read_u32_be(img) != kIdxImagesMagic)
    throw FormatError("load_idx: bad images magic in " + images_path);
  const std::uint32_t n = detail::read_u32_be(img);
  const std::uint32_t h = detail::read_u32_be(img);
  const std::uint32_t w = detail::read_u32_be(img);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("load_idx: cannot open " + labels_path);
  if (detail::read_u32_be(lab) != kIdxLabelsMagic)
    throw FormatError("load_idx: bad labels magic in " + labels_path);
  const std::uint32_t n_lab = detail::read_u32_be(lab);
  if (n != n_lab) throw ConsistencyError("load_idx: image/label count mismatch");

  const std::size_t dim = std::size_t(h) * std::size_t(w);
  Dataset ds;
  ds.inputs = Matrix(n, dim);
  ds.labels.resize(n);
  std::vector<unsigned char> buf(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    if (!img) throw IoError("load_idx: truncated image data");
    double* row = ds.inputs.row(i);
    for (std::size_t k = 0; k < dim; ++k) row[k] = buf[k] / 255.0;
  }
  std::vector<unsigned char> lbuf(n);
  lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n));
  if (!lab) throw IoError("load_idx: truncated label data");
  for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = lbuf[i];
  return ds;
}

inline void write_idx_images(const std::string& path,
                             const std::vector<std::uint8_t>& pixels,
                             std::size_t n, std::size_t h, std::size_t w) {
  if (pixels.size() != n * h * w)
    throw ConsistencyError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_idx_images: cannot open " + path);
  detail::write_u32_be(out, kIdxImagesMagic);
  detail::write_u32_be(out, static_cast<std::uint32_t>(n));
  detail::write_u32_be(out, static_cast<std::uint32_t>(h));
  detail::write_u32_be(out, static_cast<std::uint32_t>(w));
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write_idx_images: write failed");
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_idx_labels: cannot open " + path);
  detail::write_u32_be(out, kIdxLabelsMagic);
  detail::write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw IoError("write_idx_labels: write failed");
}

// ---------------------------------------------------------------------------
// Deterministic splits.
// ---------------------------------------------------------------------------

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

namespace detail {

inline Dataset take_rows(const Dataset& src, const std::vector<std::size_t>& idx,
                         std::size_t begin, std::size_t end) {
  Dataset out;
  const std::size_t dim = src.inputs.cols();
  out.inputs = Matrix(end - begin, dim);
  out.labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t r = idx[i];
    const double* srow = src.inputs.row(r);
    double* drow = out.inputs.row(i - begin);
    std::copy(srow, srow + dim, drow);
    out.labels[i - begin] = src.labels[r];
  }
  return out;
}

}  // namespace detail

/// Carve train_n samples from the training pool (shuffled), then split the
/// last floor(train_n * val_fraction) of them off as validation. The test
/// set passes through untouched. Noise injection happens downstream over
/// train+val together, so the validation labels are themselves noisy.
inline SplitDataset subset_split(const Dataset& train_pool, const Dataset& test,
                                 std::size_t train_n, double val_fraction, Rng& rng) {
  if (train_n > train_pool.size())
    throw SizeError("subset_split: train_n exceeds available data");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw InvalidInput("subset_split: val_fraction must be in [0, 1)");

  std::vector<std::size_t> idx(train_pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);

  const std::size_t val_n = static_cast<std::size_t>(
      static_cast<double>(train_n) * val_fraction);
  SplitDataset out;
  out.train = detail::take_rows(train_pool, idx, 0, train_n - val_n);
  out.val = detail::take_rows(train_pool, idx, train_n - val_n, train_n);
  out.test = test;
  return out;
}

}  // namespace gmbl
