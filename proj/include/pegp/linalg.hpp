#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pegp {

/// Raised when an operation is called in a state where it cannot proceed
/// (stale trace, empty buffer, ...). Argument problems use std::invalid_argument.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense row-major matrix of doubles.
///
/// Every entry is finite when the matrix is built from external data; the
/// checked constructor rejects NaN and Inf. Element writes through
/// operator() are unchecked, use all_finite() when that matters.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct SvdResult {
  Matrix u;                // m x k, orthonormal columns
  std::vector<double> s;   // k values, descending, non-negative
  Matrix vt;               // k x n, orthonormal rows
};

// Basic algebra. Shape mismatches throw std::invalid_argument.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // a^T b
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);  // a b^T
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
void axpy(double alpha, const Matrix& x, Matrix& y);  // y += alpha * x
double frobenius_norm(const Matrix& a);
double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> v);

/// Stacks rows of `bottom` under `top`. Either may be empty (0 rows).
Matrix vstack(const Matrix& top, const Matrix& bottom);
/// Rows [begin, end) of `a`.
Matrix row_slice(const Matrix& a, std::size_t begin, std::size_t end);
/// Columns [begin, end) of `a`.
Matrix col_slice(const Matrix& a, std::size_t begin, std::size_t end);

/// u.v / (|u| |v|). Throws std::invalid_argument on a zero vector or a
/// length mismatch.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Thin SVD by one-sided Jacobi on the shorter dimension.
///
/// Columns of U are sign-canonical: the largest-magnitude entry of each is
/// non-negative. Singular directions with numerically zero singular value
/// get an orthonormal completion so U and Vt stay orthonormal.
SvdResult svd(const Matrix& a);

/// Modified Gram-Schmidt (two passes) over the columns of `cols`.
/// Columns whose residual norm falls to <= 1e-10 of their original norm are
/// dropped, so the result may have fewer columns than the input.
Matrix orthonormalize(const Matrix& cols);

/// Orthonormal basis of the orthogonal complement of span(cols) in R^n,
/// where n = cols.rows(). `cols` must already be orthonormal.
Matrix orthogonal_complement(const Matrix& cols);

namespace reference {
// Serial kernels. The parallel versions above must match these bit for bit.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
}  // namespace reference

}  // namespace pegp
