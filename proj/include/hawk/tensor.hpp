#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "hawk/errors.hpp"

namespace hawk {

// Dense row-major matrix of 64-bit reals. This is the only numeric container
// in the project; every module builds on it. Storage is row-major and all
// reductions accumulate left-to-right (ascending inner index) so results are
// reproducible bit-for-bit across runs and thread counts.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool operator==(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

  // Appends a row; the matrix must be empty or have matching width.
  void append_row(std::span<const double> r);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Boolean companion shape used for softmax masking; true = masked out.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), data_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

// Standard product. For every output element the sum over the inner dimension
// runs in ascending index order (left-to-right), independent of loop tiling,
// so repeated runs produce identical bits.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-wise softmax with max-subtraction. Masked entries come out exactly 0
// and take no part in the normalization. A fully masked row throws
// DegenerateRowError.
Matrix softmax_rows(const Matrix& m, const BoolMatrix* mask = nullptr);

// Indices of the k largest values, returned in ascending index order.
// Ties break toward the lower index. k may be 0; k > v.size() throws.
std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k);

// Splitmix64 step; used to derive independent per-task seeds from one flag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

// Seedable deterministic generator. Wraps mt19937-64 (whose stream is fixed
// by the standard) and derives doubles/normals/integers with explicit
// formulas, so identical seeds give identical streams on every platform --
// the std::*_distribution adapters are implementation-defined and never used.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937-64/boxmuller";

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n) by rejection; unbiased for any n >= 1.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // k distinct indices drawn uniformly from [0, n), ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hawk
