// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit vectors and matrices plus the coordinatewise operations that
// the recurrent cells are assembled from.
//
// Every reduction accumulates left to right over its summation index, so
// results are bit-reproducible for a given build. Kernels are written in
// "axpy" form (the inner loop runs over independent outputs) which keeps that
// order while still letting the compiler vectorize.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace strnn {

class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline void require_dims(bool ok, const char* what, std::size_t a, std::size_t b) {
  if (!ok) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}
}  // namespace detail

class Vector {
public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  static Vector zeros(std::size_t dim) { return Vector(dim, 0.0); }
  static Vector ones(std::size_t dim) { return Vector(dim, 1.0); }
  static Vector basis(std::size_t dim, std::size_t index) {
    Vector v(dim);
    v[index] = 1.0;
    return v;
  }

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const Vector&, const Vector&) = default;

private:
  std::vector<double> data_;
};

/// Row-major dense matrix.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      detail::require_dims(r.size() == cols_, "Matrix", r.size(), cols_);
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Low-level kernels

/// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) noexcept {
  const std::size_t n = y.size();
  const double* xs = x.data();
  double* ys = y.data();
  for (std::size_t i = 0; i < n; ++i) ys[i] += a * xs[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_dims(a.size() == b.size(), "dot", a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// out += M * v, where `mt` holds M transposed (cols x rows).
/// Accumulates over the column index in increasing order; zero entries of v
/// are skipped, which makes one-hot inputs cheap.
inline void matvec_acc_pretransposed(const Matrix& mt, std::span<const double> v,
                                     std::span<double> out) {
  detail::require_dims(mt.rows() == v.size(), "matvec", mt.rows(), v.size());
  detail::require_dims(mt.cols() == out.size(), "matvec", mt.cols(), out.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double vj = v[j];
    if (vj == 0.0) continue;
    axpy(vj, mt.row(j), out);
  }
}

/// out += M * v with the same summation order as matvec_acc_pretransposed,
/// for callers that do not keep a transposed copy.
inline void matvec_acc(const Matrix& m, std::span<const double> v, std::span<double> out) {
  detail::require_dims(m.cols() == v.size(), "matvec", m.cols(), v.size());
  detail::require_dims(m.rows() == out.size(), "matvec", m.rows(), out.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double vj = v[j];
    if (vj == 0.0) continue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m(i, j) * vj;
  }
}

/// out += M^T * v  (M is rows x cols, v has M.rows entries).
inline void matvec_transposed_acc(const Matrix& m, std::span<const double> v,
                                  std::span<double> out) {
  detail::require_dims(m.rows() == v.size(), "matvec_transposed", m.rows(), v.size());
  detail::require_dims(m.cols() == out.size(), "matvec_transposed", m.cols(), out.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    axpy(vi, m.row(i), out);
  }
}

/// M += a (x) b  (outer product).
inline void outer_acc(std::span<const double> a, std::span<const double> b, Matrix& m) {
  detail::require_dims(m.rows() == a.size(), "outer", m.rows(), a.size());
  detail::require_dims(m.cols() == b.size(), "outer", m.cols(), b.size());
  // Sparse right factor (one-hot inputs): touch only its nonzero columns.
  std::size_t nnz = 0;
  for (double x : b) nnz += (x != 0.0);
  if (nnz * 4 < b.size()) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double bj = b[j];
      if (bj == 0.0) continue;
      for (std::size_t i = 0; i < a.size(); ++i) m(i, j) += a[i] * bj;
    }
    return;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    axpy(a[i], b, m.row(i));
  }
}

// ---------------------------------------------------------------------------
// Public operations

inline Vector matvec(const Matrix& m, const Vector& v) {
  detail::require_dims(m.cols() == v.dim(), "matvec", m.cols(), v.dim());
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

enum class UnaryOp { sigmoid, tanh, relu, scale, complement };

struct Unary {
  UnaryOp op;
  double factor = 1.0;  // used by `scale`

  static constexpr Unary sigmoid() { return {UnaryOp::sigmoid}; }
  static constexpr Unary tanh() { return {UnaryOp::tanh}; }
  static constexpr Unary relu() { return {UnaryOp::relu}; }
  static constexpr Unary scale(double a) { return {UnaryOp::scale, a}; }
  static constexpr Unary complement() { return {UnaryOp::complement}; }
};

// Saturated values are pulled back inside the open interval so gates never
// reach exactly 0 or 1.
inline constexpr double kOpenUpper = 1.0 - 0x1.0p-53;
inline constexpr double kOpenLower = std::numeric_limits<double>::min();

inline double sigmoid(double x) noexcept {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::clamp(s, kOpenLower, kOpenUpper);
}

inline double tanh_open(double x) noexcept {
  return std::clamp(std::tanh(x), -kOpenUpper, kOpenUpper);
}

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

inline double apply(Unary f, double x) noexcept {
  switch (f.op) {
    case UnaryOp::sigmoid: return sigmoid(x);
    case UnaryOp::tanh: return tanh_open(x);
    case UnaryOp::relu: return relu(x);
    case UnaryOp::scale: return f.factor * x;
    case UnaryOp::complement: return 1.0 - x;
  }
  return x;
}

inline Vector coordwise(Unary f, const Vector& v) {
  Vector out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = apply(f, v[i]);
  return out;
}

inline void coordwise_inplace(Unary f, Vector& v) {
  for (double& x : v) x = apply(f, x);
}

enum class BinaryOp { add, sub, max, min, mul };

inline double apply(BinaryOp op, double a, double b) noexcept {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::max: return a > b ? a : b;
    case BinaryOp::min: return a < b ? a : b;
    case BinaryOp::mul: return a * b;
  }
  return a;
}

inline Vector coordwise_bin(BinaryOp op, const Vector& u, const Vector& v) {
  detail::require_dims(u.dim() == v.dim(), "coordwise_bin", u.dim(), v.dim());
  Vector out(u.dim());
  for (std::size_t i = 0; i < u.dim(); ++i) out[i] = apply(op, u[i], v[i]);
  return out;
}

inline Vector operator+(const Vector& u, const Vector& v) { return coordwise_bin(BinaryOp::add, u, v); }
inline Vector operator-(const Vector& u, const Vector& v) { return coordwise_bin(BinaryOp::sub, u, v); }
/// Coordinatewise (Hadamard) product.
inline Vector hadamard(const Vector& u, const Vector& v) { return coordwise_bin(BinaryOp::mul, u, v); }

inline Vector softmax(const Vector& v) {
  Vector out(v.dim());
  if (v.empty()) return out;
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  detail::require_dims(a.size() == b.size(), "max_abs_diff", a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Seeded generator. Uniform draws use the top 53 bits so values are identical
// across standard-library implementations.

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) noexcept { return static_cast<std::size_t>(next_u64() % n); }
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Vector uniform_vector(std::size_t n, double lo, double hi) {
    Vector v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }
  Matrix uniform_matrix(std::size_t r, std::size_t c, double lo, double hi) {
    Matrix m(r, c);
    for (double& x : m.span()) x = uniform(lo, hi);
    return m;
  }

private:
  std::uint64_t state_;
};

}  // namespace strnn
