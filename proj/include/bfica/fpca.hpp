#pragma once

#include <cmath>
#include <string>

#include "bfica/basis.hpp"
#include "bfica/error.hpp"
#include "bfica/linalg.hpp"
#include "bfica/shrinkage.hpp"

namespace bfica {

/// Coefficient-space smoothing operator S with S^2 f = C f, C = (G + lambda P)^-1 G.
/// The half powers are the principal roots of C taken in the G-metric, where
/// C is self-adjoint. In the split coordinates of the metric, C is the
/// identity on the penalty null space and (S_G + lambda P_RR)^-1 S_G on the
/// complement, whose roots come from
///
///   M = S_G^1/2 (S_G + lambda P_RR)^-1 S_G^1/2 = Q L Q^T,
///   C_RR^{+-1/2} = S_G^-1/2 Q L^{+-1/2} Q^T S_G^1/2.
///
/// The `_rot` members act on coordinates rotated by the metric's T.
struct SmoothingOperator {
  double lambda = 0.0;
  Matrix half_power;
  Matrix inverse_half_power;
  Matrix half_power_rot;
  Matrix inverse_half_power_rot;

  /// Coefficients of S(f).
  Vector smooth(const Vector& f) const { return half_power * f; }
  /// The full operator C = S^2.
  Matrix square() const { return half_power * half_power; }
};

inline SmoothingOperator smoothing_half_power(const Metric& metric, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(Errc::invalid_configuration, "penalty parameter must be finite and >= 0");
  }
  const Index p = metric.dim();
  SmoothingOperator op;
  op.lambda = lambda;
  if (lambda == 0.0) {
    op.half_power = Matrix::Identity(p, p);
    op.inverse_half_power = Matrix::Identity(p, p);
    op.half_power_rot = Matrix::Identity(p, p);
    op.inverse_half_power_rot = Matrix::Identity(p, p);
    return op;
  }
  const Index d = metric.null_dim;
  const Index r = p - d;
  const Matrix& root = metric.schur_sqrt;
  Eigen::LLT<Matrix> llt(metric.gram_rot.bottomRightCorner(r, r) -
                         metric.gram_rot.bottomLeftCorner(r, d) * metric.null_coupling +
                         lambda * metric.penalty_rot.bottomRightCorner(r, r));
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::factorization, "G + lambda P is not positive definite");
  }
  const linalg::SymmetricEigen e = linalg::symmetric_eigen(linalg::symmetrize(root * llt.solve(root)));
  const double top = d > 0 ? std::max(1.0, e.values(0)) : e.values(0);
  if (!(top > 0.0) || e.values.minCoeff() < 1e-14 * top) {
    throw Error(Errc::singular_smoother,
                "smoothing operator is numerically singular at lambda=" + format_exact(lambda));
  }
  const Matrix left = metric.schur_inv_sqrt * e.vectors;
  const Matrix right = e.vectors.transpose() * root;
  const Matrix x = left * e.values.cwiseSqrt().asDiagonal() * right;
  const Matrix x_inv = left * e.values.cwiseSqrt().cwiseInverse().asDiagonal() * right;

  // W diag(I, X) W^-1 with W = [I -K; 0 I].
  const Matrix& k = metric.null_coupling;
  const auto lift = [&](const Matrix& block) {
    Matrix out = Matrix::Zero(p, p);
    out.topLeftCorner(d, d).setIdentity();
    out.topRightCorner(d, r) = k - k * block;
    out.bottomRightCorner(r, r) = block;
    return out;
  };
  op.half_power_rot = lift(x);
  op.inverse_half_power_rot = lift(x_inv);
  op.half_power = metric.rotation * op.half_power_rot * metric.rotation.transpose();
  op.inverse_half_power = metric.rotation * op.inverse_half_power_rot * metric.rotation.transpose();
  return op;
}

inline SmoothingOperator smoothing_half_power(const BasisSystem& basis, double lambda) {
  return smoothing_half_power(basis.metric(), lambda);
}

struct FpcaOptions {
  double lambda = 0.0;
  Index q_max = 1;
  bool shrink = false;
  bool centered = true;
};

/// Penalized FPCA in B-spline coordinates.
struct FpcaModel {
  double lambda = 0.0;
  Index q_max = 0;
  bool shrunk = false;
  double shrinkage_intensity = 0.0;
  Vector eigenvalues;       // eta_1 >= ... > 0, retained pairs only
  Matrix weight_coefs;      // p x r, columns b_{lambda,j}
  Matrix beta_coefs;        // p x r, columns C^-1/2 b_{lambda,j}
  Matrix scores;            // n x r, Z = A G B_lambda
  Matrix chol_l;            // L L^T = T^T (G + lambda P) T, T = metric rotation
  double total_variance = 0.0;  // trace of the diagonalized matrix (all eigenvalues)
  SmoothingOperator smoother;

  Index retained() const { return eigenvalues.size(); }
};

/// Largest admissible q_max: p with shrinkage, otherwise the rank bound of
/// the (centered) coefficient matrix.
inline Index max_components(Index n, Index p, bool centered, bool shrink) {
  if (shrink) return p;
  return std::max<Index>(0, std::min(p, centered ? n - 1 : n));
}

/// Solves max b^T G S G b / b^T (G + lambda P) b through the Cholesky factor
/// L L^T = T^T (G + lambda P) T and the symmetric eigenproblem
/// L^-1 T^T G S G T L^-T v = eta v, with b = T L^-T v. S is n^-1 A^T A, or
/// the shrinkage estimate rescaled to divisor n.
inline FpcaModel penalized_fpca(const Matrix& coefs, const Metric& metric, const FpcaOptions& opt) {
  const Index n = coefs.rows();
  const Index p = coefs.cols();
  if (p != metric.dim()) throw Error(Errc::invalid_input, "coefficient matrix does not match the basis");
  if (!(opt.lambda >= 0.0) || !std::isfinite(opt.lambda)) {
    throw Error(Errc::invalid_configuration, "penalty parameter must be finite and >= 0");
  }
  if (opt.q_max < 1) throw Error(Errc::invalid_configuration, "q_max must be >= 1");
  const Index bound = max_components(n, p, opt.centered, opt.shrink);
  if (opt.q_max > bound) {
    throw Error(Errc::invalid_configuration, "q_max=" + std::to_string(opt.q_max) +
                                                 " exceeds the admissible maximum " + std::to_string(bound));
  }
  if (!coefs.allFinite()) throw Error(Errc::invalid_input, "coefficient matrix has non-finite entries");

  FpcaModel model;
  model.lambda = opt.lambda;
  model.q_max = opt.q_max;
  model.shrunk = opt.shrink;

  Matrix cov;
  if (opt.shrink) {
    const ShrinkageEstimate s = shrinkage_covariance(coefs);
    cov = s.covariance * (static_cast<double>(n - 1) / static_cast<double>(n));
    model.shrinkage_intensity = s.intensity;
  } else {
    cov = coefs.transpose() * coefs / static_cast<double>(n);
  }

  Eigen::LLT<Matrix> llt(metric.penalized(opt.lambda));
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::factorization, "Cholesky factorization of G + lambda P failed");
  }
  model.chol_l = llt.matrixL();
  const auto lower = model.chol_l.triangularView<Eigen::Lower>();

  const Matrix gt = metric.gram * metric.rotation;
  const Matrix gsg = linalg::symmetrize(gt.transpose() * cov * gt);
  const Matrix half = lower.solve(gsg);                                    // L^-1 GSG
  const Matrix k = linalg::symmetrize(lower.solve(half.transpose()));      // L^-1 GSG L^-T
  const linalg::SymmetricEigen e = linalg::symmetric_eigen(k);
  model.total_variance = e.values.sum();

  const double top = e.values(0);
  if (!(top > 0.0)) throw Error(Errc::degenerate_data, "covariance of the coefficients is zero");
  Index r = 0;
  while (r < opt.q_max && e.values(r) > 1e-12 * top) ++r;

  model.eigenvalues = e.values.head(r);
  const Matrix weight_rot = model.chol_l.transpose().triangularView<Eigen::Upper>().solve(e.vectors.leftCols(r));
  model.weight_coefs = metric.rotation * weight_rot;
  model.scores = coefs * gt * weight_rot;
  model.smoother = smoothing_half_power(metric, opt.lambda);
  model.beta_coefs = metric.rotation * (model.smoother.inverse_half_power_rot * weight_rot);
  return model;
}

inline FpcaModel penalized_fpca(const BasisExpansion& expansion, double lambda, Index q_max,
                                bool shrink = false) {
  return penalized_fpca(expansion.coefs, expansion.basis->metric(),
                        FpcaOptions{lambda, q_max, shrink, expansion.centered});
}

/// Coefficients of the truncated expansion sum_{j<=q} z_ij beta_j, with the
/// stored mean added back for centered expansions.
inline Matrix reconstruct_curves(const FpcaModel& model, const BasisExpansion& expansion, Index q) {
  if (q < 1 || q > model.retained()) {
    throw Error(Errc::invalid_configuration, "q=" + std::to_string(q) + " outside 1.." +
                                                 std::to_string(model.retained()));
  }
  if (model.scores.rows() != expansion.n()) {
    throw Error(Errc::invalid_input, "model and expansion disagree on the number of curves");
  }
  Matrix out = model.scores.leftCols(q) * model.beta_coefs.leftCols(q).transpose();
  if (expansion.centered) out.rowwise() += expansion.mean_coefs.transpose();
  return out;
}

}  // namespace bfica
