#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <Eigen/Dense>

#include "bfica/bfica.hpp"

// Independent reference computations used by the tests. None of these share
// code paths with the library beyond the basic Eigen types.
namespace oracle {

using bfica::Index;
using bfica::Matrix;
using bfica::Vector;

/// Cox-de Boor recursion, right-continuous, with the last basis function
/// closed at the right end of the domain.
inline double bspline(const std::vector<double>& knots, int order, Index j, double t) {
  const auto u = [&](Index i) { return knots[static_cast<std::size_t>(i)]; };
  if (order == 1) {
    const double hi_end = knots.back();
    if (u(j) <= t && t < u(j + 1)) return 1.0;
    if (t == hi_end && u(j) < u(j + 1) && u(j + 1) == hi_end) return 1.0;
    return 0.0;
  }
  double v = 0.0;
  const double d1 = u(j + order - 1) - u(j);
  const double d2 = u(j + order) - u(j + 1);
  if (d1 > 0.0) v += (t - u(j)) / d1 * bspline(knots, order - 1, j, t);
  if (d2 > 0.0) v += (u(j + order) - t) / d2 * bspline(knots, order - 1, j + 1, t);
  return v;
}

/// Value at t (strictly inside the domain) of the spline with coefficients c,
/// by inserting t until it has full multiplicity and reading off the
/// coefficient whose basis function is the only one alive just right of t.
inline double spline_by_knot_insertion(std::vector<double> knots, std::vector<double> c, int order, double t) {
  const int deg = order - 1;
  while (true) {
    Index s = -1;
    for (Index i = 0; i + 1 < static_cast<Index>(knots.size()); ++i) {
      if (knots[static_cast<std::size_t>(i)] <= t && t < knots[static_cast<std::size_t>(i + 1)]) s = i;
    }
    Index mult = 0;
    for (double k : knots) mult += (k == t);
    if (mult >= order) return c[static_cast<std::size_t>(s - deg)];
    std::vector<double> next(c.size() + 1);
    for (Index i = 0; i < static_cast<Index>(next.size()); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (i <= s - deg) {
        next[ui] = c[ui];
      } else if (i <= s - mult) {
        const double a = (t - knots[ui]) / (knots[ui + static_cast<std::size_t>(deg)] - knots[ui]);
        next[ui] = a * c[ui] + (1.0 - a) * c[ui - 1];
      } else {
        next[ui] = c[ui - 1];
      }
    }
    knots.insert(knots.begin() + s + 1, t);
    c = std::move(next);
  }
}

/// Composite trapezoid rule on n panels, Richardson-extrapolated with 2n.
inline double trapezoid_richardson(const std::function<double(double)>& f, double a, double b, int n) {
  const auto trap = [&](int m) {
    const double h = (b - a) / m;
    double s = 0.5 * (f(a) + f(b));
    for (int k = 1; k < m; ++k) s += f(a + h * k);
    return s * h;
  };
  const double coarse = trap(n);
  const double fine = trap(2 * n);
  return (4.0 * fine - coarse) / 3.0;
}

/// Dense quadrature Gram matrix from the naive basis evaluation.
inline Matrix gram_by_quadrature(const bfica::BasisSystem& basis, int panels) {
  const Index p = basis.size();
  const auto& knots = basis.knots();
  const bfica::Interval d = basis.domain();
  const int m = 2 * panels;
  Matrix values(m + 1, p);
  for (int k = 0; k <= m; ++k) {
    const double t = d.lo + d.length() * k / m;
    for (Index j = 0; j < p; ++j) values(k, j) = bspline(knots, basis.order(), j, t);
  }
  Matrix g(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      const auto trap = [&](int stride) {
        const double h = d.length() / (m / stride);
        double s = 0.0;
        for (int k = 0; k <= m; k += stride) {
          const double w = (k == 0 || k == m) ? 0.5 : 1.0;
          s += w * values(k, i) * values(k, j);
        }
        return s * h;
      };
      g(i, j) = (4.0 * trap(1) - trap(2)) / 3.0;
    }
  }
  return g;
}

/// Least squares by the normal equations.
inline Vector normal_equations(const Matrix& phi, const Vector& y) {
  return (phi.transpose() * phi).ldlt().solve(phi.transpose() * y);
}

/// Descending generalized eigenvalues of (a, b), b positive definite.
inline Vector generalized_eigenvalues(const Matrix& a, const Matrix& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(a, b);
  return es.eigenvalues().reverse();
}

/// Denman-Beavers iteration: returns {sqrt(m), inverse sqrt(m)}.
inline std::pair<Matrix, Matrix> denman_beavers(const Matrix& m, int iterations = 100) {
  Matrix y = m;
  Matrix z = Matrix::Identity(m.rows(), m.cols());
  for (int k = 0; k < iterations; ++k) {
    const Matrix yi = y.inverse();
    const Matrix zi = z.inverse();
    const Matrix y_next = 0.5 * (y + zi);
    const Matrix z_next = 0.5 * (z + yi);
    const double change = (y_next - y).norm() / y.norm();
    y = y_next;
    z = z_next;
    if (change < 1e-15) break;
  }
  return {y, z};
}

/// Flips each column of `m` to agree in sign with the matching column of `ref`.
inline Matrix align_signs(Matrix m, const Matrix& ref) {
  for (Index c = 0; c < m.cols(); ++c) {
    if (m.col(c).dot(ref.col(c)) < 0.0) m.col(c) *= -1.0;
  }
  return m;
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

/// Unpenalized FPCA followed by kurtosis ICA, written directly from the
/// definitions: PCA of A G^1/2, whitening by the sample covariance of the
/// scores and eigendecomposition of the fourth-moment matrix.
struct PlainFicaResult {
  Vector eigenvalues;
  Matrix scores;
  Vector rho;
  Matrix zeta;
};

inline PlainFicaResult plain_fpca_ica(const Matrix& a, const Matrix& gram, Index q) {
  const Index n = a.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> gs(gram);
  const Matrix g_half = gs.eigenvectors() * gs.eigenvalues().cwiseSqrt().asDiagonal() * gs.eigenvectors().transpose();
  const Matrix g_inv_half =
      gs.eigenvectors() * gs.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * gs.eigenvectors().transpose();
  const Matrix y = a * g_half;
  Eigen::SelfAdjointEigenSolver<Matrix> es(y.transpose() * y / static_cast<double>(n));
  const Index p = gram.rows();
  PlainFicaResult r;
  r.eigenvalues = es.eigenvalues().reverse().head(q);
  Matrix v(p, q);
  for (Index j = 0; j < q; ++j) v.col(j) = es.eigenvectors().col(p - 1 - j);
  const Matrix b = g_inv_half * v;
  r.scores = a * gram * b;
  Eigen::SelfAdjointEigenSolver<Matrix> cs(r.scores.transpose() * r.scores / static_cast<double>(n));
  const Matrix w = cs.eigenvectors() * cs.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                   cs.eigenvectors().transpose();
  const Matrix zw = r.scores * w;
  Matrix kurt = Matrix::Zero(q, q);
  for (Index i = 0; i < n; ++i) {
    const Vector z = zw.row(i).transpose();
    kurt += z.squaredNorm() * z * z.transpose();
  }
  kurt /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> ks(kurt);
  r.rho = ks.eigenvalues().reverse();
  Matrix u(q, q);
  for (Index j = 0; j < q; ++j) u.col(j) = ks.eigenvectors().col(q - 1 - j);
  r.zeta = a * gram * (b * u);
  return r;
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  }
  return m;
}

/// Curves that are smooth signal plus white noise, sampled on a uniform grid.
inline bfica::SignalSample smooth_plus_rough(Index n, Index m, double rough, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  bfica::SignalSample s;
  const Vector t = bfica::uniform_grid(m);
  for (Index i = 0; i < n; ++i) {
    Vector v(m);
    const double a1 = normal(rng);
    const double a2 = normal(rng);
    const double a3 = normal(rng);
    const double ph = phase(rng);
    for (Index k = 0; k < m; ++k) {
      v(k) = a1 * std::sin(2 * M_PI * t(k) + ph) + a2 * std::cos(4 * M_PI * t(k)) + 0.5 * a3 * t(k) +
             rough * normal(rng);
    }
    s.values.push_back(v);
    s.times.push_back(t);
  }
  return s;
}

/// Runs a shell command, returning its exit status.
inline int run(const std::string& command) {
  const int status = std::system(command.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace oracle
