#include "hawk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace hawk {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw ShapeError("from_rows: ragged input, row 0 has " +
                       std::to_string(rows[0].size()) + " cols, row " +
                       std::to_string(i) + " has " + std::to_string(rows[i].size()));
    }
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

void Matrix::append_row(std::span<const double> r) {
  if (rows_ == 0) {
    cols_ = r.size();
  } else if (r.size() != cols_) {
    throw ShapeError("append_row: width " + std::to_string(r.size()) +
                     " into matrix of width " + std::to_string(cols_));
  }
  data_.insert(data_.end(), r.begin(), r.end());
  ++rows_;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " times " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix out(a.rows(), b.cols(), 0.0);
  // i-k-j order for locality; each out(i,j) still accumulates k ascending,
  // matching the documented left-to-right order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    double* orow = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& m, const BoolMatrix* mask) {
  if (mask && (mask->rows() != m.rows() || mask->cols() != m.cols())) {
    throw ShapeError("softmax_rows: mask " + shape_str(mask->rows(), mask->cols()) +
                     " vs values " + shape_str(m.rows(), m.cols()));
  }
  Matrix out(m.rows(), m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (mask && mask->at(i, j)) continue;
      maxv = std::max(maxv, m.at(i, j));
    }
    if (maxv == -std::numeric_limits<double>::infinity()) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) +
                               " is fully masked");
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (mask && mask->at(i, j)) continue;
      const double e = std::exp(m.at(i, j) - maxv);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (mask && mask->at(i, j)) continue;
      out.at(i, j) /= denom;
    }
  }
  return out;
}

std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k) {
  if (k > v.size()) {
    throw BoundsError("top_k_indices: k=" + std::to_string(k) + " exceeds length " +
                      std::to_string(v.size()));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ConsistencyError("top_k_indices: non-finite value at index " +
                             std::to_string(i));
    }
  }
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Larger value first; on ties the lower index wins.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (v[a] != v[b]) return v[a] > v[b];
    return a < b;
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw BoundsError("Rng::below: n must be >= 1");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0,1] x [0,1).
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) {
    throw BoundsError("sample_without_replacement: k=" + std::to_string(k) +
                      " exceeds n=" + std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots end up uniform without replacement.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace hawk
