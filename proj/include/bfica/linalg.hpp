#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bfica/error.hpp"

namespace bfica {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

/// Flips each column so that its entry of largest magnitude is positive
/// (first such entry on ties).
inline void fix_column_signs(Matrix& vectors) {
  for (Index c = 0; c < vectors.cols(); ++c) {
    Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0.0) vectors.col(c) *= -1.0;
  }
}

/// Full eigendecomposition of a symmetric matrix (lower triangle is read).
/// Ties keep the solver's ascending order, so diagonal and isotropic inputs
/// return identity eigenvectors.
inline SymmetricEigen symmetric_eigen(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(Errc::invalid_input, "symmetric_eigen: matrix is not square");
  }
  if (!m.allFinite()) {
    throw Error(Errc::invalid_input, "symmetric_eigen: non-finite entries");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) {
    throw Error(Errc::factorization, "symmetric eigensolver did not converge");
  }
  const Index n = m.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const Vector& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return ev(a) > ev(b); });
  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (Index k = 0; k < n; ++k) {
    out.values(k) = ev(order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = solver.eigenvectors().col(order[static_cast<std::size_t>(k)]);
  }
  fix_column_signs(out.vectors);
  return out;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Principal square root of a symmetric positive semidefinite matrix.
inline Matrix symmetric_sqrt(const Matrix& m) {
  const SymmetricEigen e = symmetric_eigen(m);
  const Vector root = e.values.cwiseMax(0.0).cwiseSqrt();
  return e.vectors * root.asDiagonal() * e.vectors.transpose();
}

/// Inverse principal square root; eigenvalues at or below `rel_floor * max`
/// are reported as singular.
inline Matrix symmetric_inverse_sqrt(const Matrix& m, double rel_floor, Errc on_singular,
                                     const std::string& what) {
  const SymmetricEigen e = symmetric_eigen(m);
  const double top = e.values.size() > 0 ? e.values(0) : 0.0;
  if (!(top > 0.0) || e.values.minCoeff() <= rel_floor * top) {
    throw Error(on_singular, what + ": matrix is singular or indefinite");
  }
  const Vector inv_root = e.values.cwiseSqrt().cwiseInverse();
  return e.vectors * inv_root.asDiagonal() * e.vectors.transpose();
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> nodes(static_cast<std::size_t>(n));
  std::vector<double> weights(static_cast<std::size_t>(n));
  const double pi = std::acos(-1.0);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double step = p0 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    // recompute derivative at converged node
    {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
    }
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    nodes[lo] = -z;
    nodes[hi] = z;
    weights[lo] = weights[hi] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {nodes, weights};
}

}  // namespace linalg
}  // namespace bfica
