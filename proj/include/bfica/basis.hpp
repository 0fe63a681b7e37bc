#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bfica/error.hpp"
#include "bfica/linalg.hpp"
#include "bfica/signal.hpp"

namespace bfica {

/// Inner-product geometry of a coefficient space: Gram matrix G, roughness
/// penalty P and the symmetric half powers of G.
///
/// When an orthonormal basis N of the penalty null space is supplied, the
/// orthogonal rotation T = [N R] is kept together with T^T G T and T^T P T,
/// in which the blocks of P touching N are exactly zero. G + lambda P is then
/// formed in rotated coordinates, so functions in the null space pass through
/// the penalized problems unaffected by rounding in lambda P. The change of
/// variables x = W y, W = [I -K; 0 I], K = G_NN^-1 G_NR, splits the rotated
/// Gram matrix into diag(G_NN, S) with S the Schur complement of G_NN.
struct Metric {
  Matrix gram;
  Matrix penalty;
  Matrix gram_sqrt;
  Matrix gram_inv_sqrt;
  Matrix rotation;
  Matrix gram_rot;
  Matrix penalty_rot;
  Index null_dim = 0;
  Matrix null_coupling;  // K
  Matrix schur_sqrt;
  Matrix schur_inv_sqrt;

  Index dim() const { return gram.rows(); }

  /// T^T (G + lambda P) T.
  Matrix penalized(double lambda) const {
    if (lambda == 0.0) return gram_rot;
    return gram_rot + lambda * penalty_rot;
  }

  static Metric from(Matrix gram, Matrix penalty, const Matrix& null_basis = Matrix()) {
    if (gram.rows() != gram.cols() || penalty.rows() != gram.rows() || penalty.cols() != gram.cols()) {
      throw Error(Errc::invalid_input, "metric: gram and penalty must be square and conformable");
    }
    const Index p = gram.rows();
    if (null_basis.size() > 0 && (null_basis.rows() != p || null_basis.cols() >= p)) {
      throw Error(Errc::invalid_input, "metric: null-space basis does not match the penalty");
    }
    Metric m;
    m.gram = linalg::symmetrize(gram);
    m.penalty = linalg::symmetrize(penalty);
    const linalg::SymmetricEigen e = linalg::symmetric_eigen(m.gram);
    if (!(e.values.minCoeff() > 0.0)) {
      throw Error(Errc::factorization, "gram matrix is not positive definite");
    }
    m.gram_sqrt = e.vectors * e.values.cwiseSqrt().asDiagonal() * e.vectors.transpose();
    m.gram_inv_sqrt =
        e.vectors * e.values.cwiseSqrt().cwiseInverse().asDiagonal() * e.vectors.transpose();

    m.null_dim = null_basis.cols();
    if (m.null_dim > 0) {
      Eigen::HouseholderQR<Matrix> qr(null_basis);
      m.rotation = qr.householderQ() * Matrix::Identity(p, p);
    } else {
      m.rotation = Matrix::Identity(p, p);
    }
    m.gram_rot = linalg::symmetrize(m.rotation.transpose() * m.gram * m.rotation);
    m.penalty_rot = linalg::symmetrize(m.rotation.transpose() * m.penalty * m.rotation);
    const Index d = m.null_dim;
    m.penalty_rot.topRows(d).setZero();
    m.penalty_rot.leftCols(d).setZero();

    const Index r = p - d;
    Matrix schur = m.gram_rot.bottomRightCorner(r, r);
    if (d > 0) {
      Eigen::LLT<Matrix> nn(m.gram_rot.topLeftCorner(d, d));
      m.null_coupling = nn.solve(m.gram_rot.topRightCorner(d, r));
      schur -= m.gram_rot.bottomLeftCorner(r, d) * m.null_coupling;
    } else {
      m.null_coupling = Matrix::Zero(0, r);
    }
    const linalg::SymmetricEigen se = linalg::symmetric_eigen(linalg::symmetrize(schur));
    if (r > 0 && !(se.values.minCoeff() > 0.0)) {
      throw Error(Errc::factorization, "gram matrix is not positive definite");
    }
    m.schur_sqrt = se.vectors * se.values.cwiseSqrt().asDiagonal() * se.vectors.transpose();
    m.schur_inv_sqrt = se.vectors * se.values.cwiseSqrt().cwiseInverse().asDiagonal() * se.vectors.transpose();
    return m;
  }
};

/// p x d matrix whose columns span the null space of the d-th order
/// difference operator: Chebyshev polynomials of degree < d in the index.
inline Matrix difference_null_basis(Index p, int order) {
  Matrix n(p, order);
  for (Index j = 0; j < p; ++j) {
    const double x = p > 1 ? (2.0 * static_cast<double>(j) - static_cast<double>(p - 1)) / static_cast<double>(p - 1)
                           : 0.0;
    for (int k = 0; k < order; ++k) {
      n(j, k) = k == 0 ? 1.0 : k == 1 ? x : 2.0 * x * n(j, k - 1) - n(j, k - 2);
    }
  }
  return n;
}

/// (p-d) x p matrix of d-th order differences of adjacent coefficients.
inline Matrix difference_matrix(Index p, int order) {
  if (order < 0 || order >= p) {
    throw Error(Errc::invalid_configuration, "penalty order must satisfy 0 <= d < p");
  }
  std::vector<double> stencil{1.0};
  for (int r = 0; r < order; ++r) {
    std::vector<double> next(stencil.size() + 1, 0.0);
    for (std::size_t j = 0; j < stencil.size(); ++j) {
      next[j] -= stencil[j];
      next[j + 1] += stencil[j];
    }
    stencil = std::move(next);
  }
  Matrix delta = Matrix::Zero(p - order, p);
  for (Index r = 0; r < p - order; ++r) {
    for (std::size_t j = 0; j < stencil.size(); ++j) delta(r, r + static_cast<Index>(j)) = stencil[j];
  }
  return delta;
}

/// B-spline basis of order k (degree k-1) on a clamped knot vector, with its
/// exact Gram matrix and d-th order difference penalty.
class BasisSystem {
 public:
  BasisSystem(std::vector<double> knots, int order, int penalty_order)
      : knots_(std::move(knots)), order_(order), penalty_order_(penalty_order) {
    if (order_ < 1) throw Error(Errc::invalid_configuration, "B-spline order must be >= 1");
    const auto total = static_cast<Index>(knots_.size());
    p_ = total - order_;
    if (p_ < order_) {
      throw Error(Errc::invalid_configuration,
                  "basis dimension p=" + std::to_string(p_) + " is smaller than order " +
                      std::to_string(order_));
    }
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (!(knots_[i] >= knots_[i - 1]) || !std::isfinite(knots_[i])) {
        throw Error(Errc::invalid_configuration, "knot sequence must be finite and nondecreasing");
      }
    }
    if (!(domain().hi > domain().lo)) {
      throw Error(Errc::invalid_configuration, "degenerate basis domain");
    }
    delta_ = difference_matrix(p_, penalty_order_);
    metric_ = Metric::from(assemble_gram(), delta_.transpose() * delta_,
                           difference_null_basis(p_, penalty_order_));
  }

  int order() const { return order_; }
  Index size() const { return p_; }
  int penalty_order() const { return penalty_order_; }
  const std::vector<double>& knots() const { return knots_; }
  Interval domain() const {
    return {knots_[static_cast<std::size_t>(order_ - 1)], knots_[static_cast<std::size_t>(p_)]};
  }

  const Matrix& gram() const { return metric_.gram; }
  const Matrix& penalty() const { return metric_.penalty; }
  const Matrix& difference() const { return delta_; }
  const Metric& metric() const { return metric_; }

  /// Index of the knot span containing t, in [order-1, p-1]; the right
  /// endpoint belongs to the last span.
  Index find_span(double t) const {
    const auto k = static_cast<std::size_t>(order_);
    const auto p = static_cast<std::size_t>(p_);
    if (t >= knots_[p]) return p_ - 1;
    const auto it = std::upper_bound(knots_.begin() + static_cast<std::ptrdiff_t>(k - 1),
                                     knots_.begin() + static_cast<std::ptrdiff_t>(p) + 1, t);
    const auto span = static_cast<Index>(it - knots_.begin()) - 1;
    return std::clamp<Index>(span, order_ - 1, p_ - 1);
  }

  /// Values of the `order` basis functions that are nonzero on `span`
  /// (functions span-order+1 .. span) at t (Cox-de Boor recurrence).
  void local_values(Index span, double t, double* out) const {
    const int k = order_;
    std::vector<double> left(static_cast<std::size_t>(k));
    std::vector<double> right(static_cast<std::size_t>(k));
    out[0] = 1.0;
    for (int j = 1; j < k; ++j) {
      left[static_cast<std::size_t>(j)] = t - knots_[static_cast<std::size_t>(span + 1 - j)];
      right[static_cast<std::size_t>(j)] = knots_[static_cast<std::size_t>(span + j)] - t;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
        const double temp = denom != 0.0 ? out[r] / denom : 0.0;
        out[r] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
        saved = left[static_cast<std::size_t>(j - r)] * temp;
      }
      out[j] = saved;
    }
  }

  /// Clamps points within rounding distance of the domain and rejects the rest.
  double checked_point(double t) const {
    const Interval d = domain();
    const double tol = 1e-12 * d.length();
    if (!(t >= d.lo - tol && t <= d.hi + tol)) {
      throw Error(Errc::out_of_domain, "point " + format_exact(t) + " outside basis domain [" +
                                           format_exact(d.lo) + ", " + format_exact(d.hi) + "]");
    }
    return std::clamp(t, d.lo, d.hi);
  }

 private:
  Matrix assemble_gram() const {
    const auto [nodes, weights] = linalg::gauss_legendre(order_);
    Matrix g = Matrix::Zero(p_, p_);
    std::vector<double> vals(static_cast<std::size_t>(order_));
    for (Index span = order_ - 1; span < p_; ++span) {
      const double a = knots_[static_cast<std::size_t>(span)];
      const double b = knots_[static_cast<std::size_t>(span + 1)];
      if (!(b > a)) continue;
      const double half = 0.5 * (b - a);
      const double mid = 0.5 * (a + b);
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        local_values(span, mid + half * nodes[q], vals.data());
        const double w = half * weights[q];
        const Index first = span - order_ + 1;
        for (int r = 0; r < order_; ++r) {
          for (int c = 0; c < order_; ++c) {
            g(first + r, first + c) += w * vals[static_cast<std::size_t>(r)] * vals[static_cast<std::size_t>(c)];
          }
        }
      }
    }
    return g;
  }

  std::vector<double> knots_;
  int order_;
  int penalty_order_;
  Index p_ = 0;
  Matrix delta_;
  Metric metric_;
};

/// Clamped knot vector with equally spaced interior knots giving p functions.
inline std::vector<double> uniform_knots(Interval domain, Index p, int order) {
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(p + order));
  const Index interior = p - order;
  for (int i = 0; i < order; ++i) knots.push_back(domain.lo);
  for (Index j = 1; j <= interior; ++j) {
    knots.push_back(domain.lo + domain.length() * static_cast<double>(j) / static_cast<double>(interior + 1));
  }
  for (int i = 0; i < order; ++i) knots.push_back(domain.hi);
  return knots;
}

inline BasisSystem make_basis(Interval domain, Index p, int order, int penalty_order = 2) {
  if (!(std::isfinite(domain.lo) && std::isfinite(domain.hi) && domain.hi > domain.lo)) {
    throw Error(Errc::invalid_configuration, "degenerate domain");
  }
  if (order < 1) throw Error(Errc::invalid_configuration, "B-spline order must be >= 1");
  if (p < order) {
    throw Error(Errc::invalid_configuration, "p=" + std::to_string(p) + " must be >= order=" +
                                                 std::to_string(order));
  }
  if (penalty_order < 0 || penalty_order >= p) {
    throw Error(Errc::invalid_configuration, "penalty order must satisfy 0 <= d < p");
  }
  return BasisSystem(uniform_knots(domain, p, order), order, penalty_order);
}

/// |points| x p matrix of basis values.
inline Matrix eval_basis(const BasisSystem& basis, std::span<const double> points) {
  const Index p = basis.size();
  const int k = basis.order();
  Matrix phi = Matrix::Zero(static_cast<Index>(points.size()), p);
  std::vector<double> vals(static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < points.size(); ++r) {
    const double t = basis.checked_point(points[r]);
    const Index span = basis.find_span(t);
    basis.local_values(span, t, vals.data());
    for (int j = 0; j < k; ++j) phi(static_cast<Index>(r), span - k + 1 + j) = vals[static_cast<std::size_t>(j)];
  }
  return phi;
}

inline Matrix eval_basis(const BasisSystem& basis, const Vector& points) {
  return eval_basis(basis, std::span<const double>(points.data(), static_cast<std::size_t>(points.size())));
}

/// Basis coefficients of n curves (rows of `coefs`). When centered, the
/// column means have been removed and kept in `mean_coefs`.
struct BasisExpansion {
  std::shared_ptr<const BasisSystem> basis;
  Matrix coefs;
  bool centered = false;
  Vector mean_coefs;
  Vector rss;  // per-curve residual sum of squares of the least-squares fit

  Index n() const { return coefs.rows(); }
  Index p() const { return coefs.cols(); }

  /// Coefficients with the sample mean restored.
  Matrix uncentered() const {
    if (!centered) return coefs;
    return coefs.rowwise() + mean_coefs.transpose();
  }
};

/// Least-squares basis coefficients of every curve, via column-pivoted QR.
inline BasisExpansion fit_coefficients(const SignalSample& sample,
                                       std::shared_ptr<const BasisSystem> basis, bool center = true) {
  sample.validate();
  const Index p = basis->size();
  const auto n = static_cast<Index>(sample.size());
  BasisExpansion out;
  out.basis = basis;
  out.coefs.resize(n, p);
  out.rss.resize(n);

  Eigen::ColPivHouseholderQR<Matrix> qr;
  const Vector* cached_grid = nullptr;
  Matrix phi;
  for (Index i = 0; i < n; ++i) {
    const Vector& t = sample.times[static_cast<std::size_t>(i)];
    const Vector& y = sample.values[static_cast<std::size_t>(i)];
    if (cached_grid == nullptr || cached_grid->size() != t.size() || *cached_grid != t) {
      if (t.size() < p) {
        throw Error(Errc::fit_singular, sample.curve_name(static_cast<std::size_t>(i)) + ": " +
                                            std::to_string(t.size()) + " samples for " +
                                            std::to_string(p) + " basis functions");
      }
      phi = eval_basis(*basis, t);
      qr.compute(phi);
      if (qr.rank() < p) {
        throw Error(Errc::fit_singular, sample.curve_name(static_cast<std::size_t>(i)) +
                                            ": design matrix is rank deficient (rank " +
                                            std::to_string(qr.rank()) + " < p=" + std::to_string(p) + ")");
      }
      cached_grid = &t;
    }
    const Vector a = qr.solve(y);
    out.coefs.row(i) = a.transpose();
    out.rss(i) = (y - phi * a).squaredNorm();
  }

  out.mean_coefs = Vector::Zero(p);
  if (center) {
    out.mean_coefs = out.coefs.colwise().mean().transpose();
    out.coefs.rowwise() -= out.mean_coefs.transpose();
    out.centered = true;
  }
  return out;
}

inline BasisExpansion fit_coefficients(const SignalSample& sample, const BasisSystem& basis,
                                       bool center = true) {
  return fit_coefficients(sample, std::make_shared<const BasisSystem>(basis), center);
}

}  // namespace bfica
