#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "pegp/linalg.hpp"
#include "test_support.hpp"

using namespace pegp;
using namespace pegp::testing;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

double orthogonality_error(const Matrix& q) {
  return max_abs_diff(matmul_at_b(q, q), Matrix::identity(q.cols()));
}

double reconstruction_error(const Matrix& a, const SvdResult& r) {
  Matrix us = r.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= r.s[j];
  return frobenius_norm(subtract(a, matmul(us, r.vt)));
}

struct Shape {
  const char* name;
  std::size_t rows, cols, rank;  // rank 0 means full rank
};

const Shape kShapes[] = {
    {"tall", 12, 5, 0},
    {"wide", 4, 11, 0},
    {"square", 8, 8, 0},
    {"rank-deficient", 9, 7, 3},
};

Matrix make_case(const Shape& s, std::uint64_t seed) {
  if (s.rank == 0) return random_matrix(s.rows, s.cols, seed);
  return random_low_rank(s.rows, s.cols, s.rank, seed);
}

// Projector onto the left singular directions with index in [begin, end).
Matrix left_projector(const Matrix& u, std::size_t begin, std::size_t end) {
  return projector(col_slice(u, begin, end));
}

}  // namespace

TEST_CASE("svd invariants on seeded matrices of every shape class") {
  for (const auto& shape : kShapes) {
    CAPTURE(shape.name);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Matrix a = make_case(shape, 1000 + seed);
      const auto r = svd(a);
      const std::size_t k = std::min(shape.rows, shape.cols);
      REQUIRE(r.u.rows() == shape.rows);
      REQUIRE(r.u.cols() == k);
      REQUIRE(r.vt.rows() == k);
      REQUIRE(r.vt.cols() == shape.cols);
      CHECK(orthogonality_error(r.u) <= 1e-10);
      CHECK(orthogonality_error(transpose(r.vt)) <= 1e-10);
      CHECK(reconstruction_error(a, r) <= 1e-10 * std::max(1.0, frobenius_norm(a)));
      for (std::size_t i = 0; i < k; ++i) {
        CHECK(r.s[i] >= 0.0);
        if (i > 0) CHECK(r.s[i] <= r.s[i - 1]);
      }
    }
  }
}

TEST_CASE("svd agrees with an independent Jacobi implementation on singular subspaces") {
  for (const auto& shape : kShapes) {
    CAPTURE(shape.name);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Matrix a = make_case(shape, 5000 + seed);
      const auto r = svd(a);
      Eigen::JacobiSVD<Eigen::MatrixXd> oracle(to_eigen(a), Eigen::ComputeThinU | Eigen::ComputeThinV);
      const auto& sv = oracle.singularValues();
      const std::size_t k = std::min(shape.rows, shape.cols);
      const double top = sv(0);
      for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(r.s[i] - sv(static_cast<Eigen::Index>(i))) <= 1e-10 * top);

      // Nonzero part: compare rank-one projectors, sign free.
      const std::size_t nonzero = shape.rank == 0 ? k : shape.rank;
      Matrix ou(shape.rows, k);
      for (std::size_t i = 0; i < shape.rows; ++i)
        for (std::size_t j = 0; j < k; ++j)
          ou(i, j) = oracle.matrixU()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      for (std::size_t j = 0; j < nonzero; ++j)
        CHECK(max_abs_diff(left_projector(r.u, j, j + 1), left_projector(ou, j, j + 1)) <= 1e-9);
      // The range projector as a whole.
      CHECK(max_abs_diff(left_projector(r.u, 0, nonzero), left_projector(ou, 0, nonzero)) <= 1e-9);
    }
  }
}

TEST_CASE("svd hand cases") {
  SUBCASE("identity") {
    const auto r = svd(Matrix::identity(3));
    for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    // U and V are signed permutations.
    for (const Matrix* m : {&r.u, &r.vt}) {
      for (std::size_t i = 0; i < 3; ++i) {
        int ones = 0;
        for (std::size_t j = 0; j < 3; ++j) {
          const double v = std::abs((*m)(i, j));
          CHECK((v < 1e-15 || std::abs(v - 1.0) < 1e-15));
          ones += v > 0.5;
        }
        CHECK(ones == 1);
      }
    }
  }
  SUBCASE("zero matrix") {
    const auto r = svd(Matrix(2, 2));
    CHECK(r.s == std::vector<double>{0.0, 0.0});
    CHECK(orthogonality_error(r.u) <= 1e-15);
    CHECK(orthogonality_error(transpose(r.vt)) <= 1e-15);
  }
  SUBCASE("seeded 4x3") {
    const Matrix a = random_matrix(4, 3, 77);
    CHECK(reconstruction_error(a, svd(a)) <= 1e-10 * frobenius_norm(a));
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(svd(Matrix(0, 3)), std::invalid_argument);
    CHECK_THROWS_AS(svd(Matrix(3, 0)), std::invalid_argument);
  }
}

TEST_CASE("svd is sign canonical and deterministic") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = random_matrix(7, 5, 300 + seed);
    const auto r = svd(a);
    for (std::size_t j = 0; j < r.u.cols(); ++j) {
      double best = 0.0;
      for (std::size_t i = 0; i < r.u.rows(); ++i)
        if (std::abs(r.u(i, j)) > std::abs(best)) best = r.u(i, j);
      CHECK(best >= 0.0);
    }
    const auto again = svd(a);
    CHECK(again.u == r.u);
    CHECK(again.s == r.s);
    CHECK(again.vt == r.vt);
  }
}

TEST_CASE("cosine similarity") {
  const std::vector<double> x{1, 0}, y{0, 1}, d{1, 1}, z{0, 0};
  CHECK(cosine_similarity(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK(cosine_similarity(d, x) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(cosine_similarity(d, x) == cosine_similarity(x, d));
  CHECK_THROWS_AS(cosine_similarity(x, z), std::invalid_argument);
  CHECK_THROWS_AS(cosine_similarity(x, std::vector<double>{1, 0, 0}), std::invalid_argument);
}

TEST_CASE("orthonormalize") {
  SUBCASE("orthonormal input is kept up to sign") {
    const Matrix q = svd(random_matrix(6, 3, 9)).u;
    const Matrix o = orthonormalize(q);
    REQUIRE(o.cols() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      const double c = std::abs(dot(o.column(j), q.column(j)));
      CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("duplicate column is dropped") {
    Matrix a = random_matrix(5, 3, 10);
    a.set_column(2, a.column(0));
    CHECK(orthonormalize(a).cols() == 2);
  }
  SUBCASE("rank-3 input matches the Gram-Schmidt oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix a = random_low_rank(6, 4, 3, 400 + seed);
      const Matrix o = orthonormalize(a);
      REQUIRE(o.cols() == 3);
      CHECK(orthogonality_error(o) <= 1e-10);
      CHECK(max_abs_diff(projector(o), gram_schmidt_projector(a)) <= 1e-9);
    }
  }
  SUBCASE("idempotent") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix o = orthonormalize(random_matrix(8, 5, 500 + seed));
      CHECK(max_abs_diff(orthonormalize(o), o) <= 1e-10);
    }
  }
  SUBCASE("zero columns vanish") {
    CHECK(orthonormalize(Matrix(4, 2)).cols() == 0);
  }
}

TEST_CASE("orthogonal complement spans the rest") {
  const Matrix q = orthonormalize(random_matrix(7, 3, 12));
  const Matrix c = orthogonal_complement(q);
  REQUIRE(c.cols() == 4);
  CHECK(max_abs_diff(matmul_at_b(q, c), Matrix(3, 4)) <= 1e-12);
  CHECK(max_abs_diff(add(projector(q), projector(c)), Matrix::identity(7)) <= 1e-12);
}

TEST_CASE("basic algebra") {
  const Matrix a = random_matrix(3, 4, 1);
  CHECK(matmul(Matrix::identity(3), a) == a);
  CHECK(transpose(transpose(a)) == a);
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(m, Matrix::from_rows({{1}, {1}})) == Matrix::from_rows({{3}, {7}}));
  CHECK(add(m, m) == scale(m, 2.0));
  CHECK(frobenius_norm(m) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-15));
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(add(a, m), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(2, 2, {1.0}), std::invalid_argument);
}

TEST_CASE("vstack and slicing") {
  const Matrix a = random_matrix(2, 3, 1), b = random_matrix(4, 3, 2);
  const Matrix s = vstack(a, b);
  CHECK(row_slice(s, 0, 2) == a);
  CHECK(row_slice(s, 2, 6) == b);
  CHECK(vstack(Matrix(), b) == b);
  CHECK(col_slice(s, 1, 3).cols() == 2);
  CHECK_THROWS_AS(vstack(a, random_matrix(1, 2, 3)), std::invalid_argument);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
  // Large enough to cross the threading threshold.
  const Matrix a = random_matrix(96, 80, 21), b = random_matrix(80, 72, 22), c = random_matrix(96, 72, 23);
  CHECK(matmul(a, b) == reference::matmul(a, b));
  CHECK(matmul_at_b(a, c) == reference::matmul_at_b(a, c));
  CHECK(matmul_a_bt(a, transpose(b)) == reference::matmul_a_bt(a, transpose(b)));
  const Matrix small = random_matrix(3, 3, 24);
  CHECK(matmul(small, small) == reference::matmul(small, small));
}
