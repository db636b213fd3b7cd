#pragma once

// Test-only helpers: fixtures, random matrices and independent oracles.
// Nothing in here calls into the code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pegp/backbone.hpp"
#include "pegp/linalg.hpp"
#include "pegp/pet.hpp"
#include "pegp/rng.hpp"

namespace pegp::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return rng.normal_matrix(rows, cols, sd);
}

/// rows x cols matrix of rank `rank` (product of two Gaussian factors).
inline Matrix random_low_rank(std::size_t rows, std::size_t cols, std::size_t rank, std::uint64_t seed) {
  return matmul(random_matrix(rows, rank, seed), random_matrix(rank, cols, seed + 1));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Classical Gram-Schmidt projector onto span(cols): an oracle independent of
/// the library's two-pass modified Gram-Schmidt.
inline Matrix gram_schmidt_projector(const Matrix& cols, double tol = 1e-8) {
  const std::size_t n = cols.rows();
  std::vector<std::vector<double>> q;
  for (std::size_t j = 0; j < cols.cols(); ++j) {
    std::vector<double> v = cols.column(j);
    std::vector<double> w = v;
    for (const auto& b : q) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += b[i] * v[i];
      for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
    }
    double nw = 0.0;
    for (double x : w) nw += x * x;
    nw = std::sqrt(nw);
    double nv = 0.0;
    for (double x : v) nv += x * x;
    if (nw <= tol * std::sqrt(nv)) continue;
    for (double& x : w) x /= nw;
    q.push_back(w);
  }
  Matrix p(n, n);
  for (const auto& b : q)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) p(i, k) += b[i] * b[k];
  return p;
}

/// Projector onto the null space of the rows of `x` (an n x d matrix),
/// computed as I - P_rowspace via classical Gram-Schmidt on x^T.
inline Matrix null_space_projector(const Matrix& x) {
  const std::size_t d = x.cols();
  Matrix p = Matrix::identity(d);
  return subtract(p, gram_schmidt_projector(transpose(x)));
}

inline Matrix projector(const Matrix& basis) {
  if (basis.cols() == 0) return Matrix(basis.rows(), basis.rows());
  return matmul_a_bt(basis, basis);
}

/// A small model whose every PET tensor is non-trivial (W_u != 0), so all
/// gradients are exercised.
struct Fixture {
  TransformerConfig config;
  FrozenWeights weights;
  PetState pet;
  Classifier head;
};

inline Fixture make_fixture(PetParadigm paradigm, std::size_t dim = 16, std::size_t depth = 2, std::uint64_t seed = 7,
                            std::size_t rank = 4) {
  Fixture f;
  f.config.depth = depth;
  f.config.dim = dim;
  f.config.heads = 4;
  f.config.seq_len = 4;
  f.config.mlp_ratio = 2;
  f.config.num_classes = 5;
  f.weights = init_backbone(f.config, seed);
  PetConfig pc;
  pc.prompt_length = 3;
  pc.prefix_length = 3;
  pc.rank = rank;
  pc.lora_scale = 1.0;
  f.pet = init_pet(paradigm, f.config, pc, seed + 1);
  Rng rng(seed + 2);
  f.pet.tensors.for_each([&](const std::string&, Matrix& m) {
    for (double& v : m.data()) v += 0.3 * rng.normal();
  });
  f.head = {rng.normal_matrix(dim, f.config.num_classes, 0.5)};
  return f;
}

inline Matrix random_tokens(const TransformerConfig& c, std::uint64_t seed) {
  return random_matrix(c.seq_len, c.dim, seed);
}

/// Central finite differences of <loss_grad, logits> with respect to every
/// entry of every PET tensor and the classifier.
struct FiniteDifference {
  PetTensors pet;
  Matrix classifier;
};

inline FiniteDifference finite_difference(const Fixture& f, const Matrix& tokens, const std::vector<double>& loss_grad,
                                          double step = 1e-5) {
  auto objective = [&](const PetState& pet, const Classifier& head) {
    const auto logits = predict(f.weights, pet, head, tokens);
    double s = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) s += loss_grad[c] * logits[c];
    return s;
  };
  FiniteDifference out{f.pet.tensors.zeros_like(), Matrix(f.head.weight.rows(), f.head.weight.cols())};
  PetState probe = f.pet;
  std::vector<Matrix*> targets;
  std::vector<Matrix*> results;
  probe.tensors.for_each([&](const std::string&, Matrix& m) { targets.push_back(&m); });
  out.pet.for_each([&](const std::string&, Matrix& m) { results.push_back(&m); });
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (std::size_t i = 0; i < targets[t]->size(); ++i) {
      double& v = targets[t]->data()[i];
      const double keep = v;
      v = keep + step;
      const double up = objective(probe, f.head);
      v = keep - step;
      const double down = objective(probe, f.head);
      v = keep;
      results[t]->data()[i] = (up - down) / (2.0 * step);
    }
  }
  Classifier head = f.head;
  for (std::size_t i = 0; i < head.weight.size(); ++i) {
    double& v = head.weight.data()[i];
    const double keep = v;
    v = keep + step;
    const double up = objective(f.pet, head);
    v = keep - step;
    const double down = objective(f.pet, head);
    v = keep;
    out.classifier.data()[i] = (up - down) / (2.0 * step);
  }
  return out;
}

/// max |a - b| / max |b|, the error measure used for gradient checks.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double scale = 0.0;
  for (double v : numeric.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(analytic, numeric) / std::max(scale, 1e-12);
}

}  // namespace pegp::testing
