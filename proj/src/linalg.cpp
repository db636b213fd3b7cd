#include "pegp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace pegp {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Row-parallel work below this many multiply-adds is not worth a fork.
constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) + " != " +
                                std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  if (!all_finite()) throw std::invalid_argument("Matrix: non-finite entry");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    require(r.size() == cols, "Matrix::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  require(values.size() == rows_, "Matrix::set_column: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Kernels. Each output element is accumulated over k in ascending order in
// both the serial and the parallel variant, so results are bitwise equal.

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_at_b: row count mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const double aki = a(k, i);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_a_bt: column count mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  }
  return c;
}

}  // namespace reference

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::size_t work = a.rows() * a.cols() * b.cols();
  if (work < kParallelThreshold) return reference::matmul(a, b);
  Matrix c(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_at_b: row count mismatch");
  const std::size_t work = a.rows() * a.cols() * b.cols();
  if (work < kParallelThreshold) return reference::matmul_at_b(a, b);
  Matrix c(a.cols(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const double aki = a(k, i);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_a_bt: column count mismatch");
  const std::size_t work = a.rows() * a.cols() * b.rows();
  if (work < kParallelThreshold) return reference::matmul_a_bt(a, b);
  Matrix c(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "subtract: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double factor) {
  Matrix c = a;
  for (double& v : c.data()) v *= factor;
  return c;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "axpy: shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

double frobenius_norm(const Matrix& a) { return norm(a.data()); }

double dot(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double norm(std::span<const double> v) {
  // Scaled accumulation keeps tiny and huge entries from under/overflowing.
  double scale_v = 0.0;
  for (double x : v) scale_v = std::max(scale_v, std::abs(x));
  if (scale_v == 0.0) return 0.0;
  double acc = 0.0;
  for (double x : v) {
    const double t = x / scale_v;
    acc += t * t;
  }
  return scale_v * std::sqrt(acc);
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  require(top.cols() == bottom.cols(), "vstack: column count mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

Matrix row_slice(const Matrix& a, std::size_t begin, std::size_t end) {
  require(begin <= end && end <= a.rows(), "row_slice: bad range");
  Matrix out(end - begin, a.cols());
  std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
            a.data().begin() + static_cast<std::ptrdiff_t>(end * a.cols()), out.data().begin());
  return out;
}

Matrix col_slice(const Matrix& a, std::size_t begin, std::size_t end) {
  require(begin <= end && end <= a.cols(), "col_slice: bad range");
  Matrix out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = a(i, j);
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "cosine_similarity: length mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  require(nu > 0.0 && nv > 0.0, "cosine_similarity: zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// SVD

namespace {

constexpr double kJacobiTol = 1e-12;
constexpr int kMaxSweeps = 60;

// Columns as contiguous vectors; Jacobi touches two full columns per rotation.
using Columns = std::vector<std::vector<double>>;

Columns to_columns(const Matrix& a) {
  Columns cols(a.cols(), std::vector<double>(a.rows()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) cols[j][i] = a(i, j);
  return cols;
}

// Two-pass modified Gram-Schmidt of v against `basis`. Returns residual norm
// and leaves v orthogonalized (not normalized).
double orthogonalize_against(std::vector<double>& v, const Columns& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& q : basis) {
      const double proj = dot(q, v);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * q[i];
    }
  }
  return norm(v);
}

// Completes `basis` with a unit vector orthogonal to all its members, trying
// standard basis vectors in order.
std::vector<double> completion_vector(const Columns& basis, std::size_t m) {
  for (std::size_t e = 0; e < m; ++e) {
    std::vector<double> v(m, 0.0);
    v[e] = 1.0;
    const double r = orthogonalize_against(v, basis);
    if (r > 0.5 / std::sqrt(static_cast<double>(m))) {
      for (double& x : v) x /= r;
      return v;
    }
  }
  throw InvalidState("svd: could not complete orthonormal basis");
}

SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Columns w = to_columns(a);
  Columns v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(w[p], w[p]);
        const double beta = dot(w[q], w[q]);
        const double gamma = dot(w[p], w[q]);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kJacobiTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w[p][i];
          const double wq = w[q][i];
          w[p][i] = c * wp - s * wq;
          w[q][i] = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v[p][i];
          const double vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm(w[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n > 0 ? sigma[order[0]] : 0.0;
  const double zero_tol = static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * smax;

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  Columns ucols;
  ucols.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.s[k] = sigma[j];
    std::vector<double> u(m, 0.0);
    bool have = false;
    if (sigma[j] > zero_tol && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) u[i] = w[j][i] / sigma[j];
      const double r = orthogonalize_against(u, ucols);
      if (r > 0.5) {
        for (double& x : u) x /= r;
        have = true;
      }
    }
    if (!have) u = completion_vector(ucols, m);
    ucols.push_back(std::move(u));
  }

  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    auto& u = ucols[k];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(u[i]) > std::abs(u[arg])) arg = i;
    const double sign = u[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) out.u(i, k) = sign * u[i];
    for (std::size_t i = 0; i < n; ++i) out.vt(k, i) = sign * v[j][i];
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& a) {
  require(a.rows() > 0 && a.cols() > 0, "svd: empty matrix");
  require(a.all_finite(), "svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);

  // Wide: decompose the transpose, then swap roles and re-canonicalize on U.
  SvdResult t = svd_tall(transpose(a));
  SvdResult out{transpose(t.vt), std::move(t.s), transpose(t.u)};
  for (std::size_t k = 0; k < out.s.size(); ++k) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < out.u.rows(); ++i)
      if (std::abs(out.u(i, k)) > std::abs(out.u(arg, k))) arg = i;
    if (out.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, k) = -out.u(i, k);
      for (std::size_t i = 0; i < out.vt.cols(); ++i) out.vt(k, i) = -out.vt(k, i);
    }
  }
  return out;
}

Matrix orthonormalize(const Matrix& cols) {
  require(cols.rows() > 0, "orthonormalize: empty input");
  Columns kept;
  for (std::size_t j = 0; j < cols.cols(); ++j) {
    std::vector<double> v = cols.column(j);
    const double original = norm(v);
    if (original == 0.0) continue;
    const double r = orthogonalize_against(v, kept);
    if (r <= 1e-10 * original) continue;
    for (double& x : v) x /= r;
    kept.push_back(std::move(v));
  }
  Matrix out(cols.rows(), kept.size());
  for (std::size_t j = 0; j < kept.size(); ++j) out.set_column(j, kept[j]);
  return out;
}

Matrix orthogonal_complement(const Matrix& cols) {
  const std::size_t n = cols.rows();
  require(n > 0, "orthogonal_complement: zero dimension");
  Matrix proj = Matrix::identity(n);
  if (cols.cols() > 0) proj = subtract(proj, matmul_a_bt(cols, cols));
  const SvdResult r = svd(proj);
  std::size_t keep = 0;
  while (keep < r.s.size() && r.s[keep] > 0.5) ++keep;
  return col_slice(r.u, 0, keep);
}

}  // namespace pegp
