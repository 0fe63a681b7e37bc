#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bfica/basis.hpp"
#include "bfica/error.hpp"
#include "bfica/fpca.hpp"
#include "bfica/linalg.hpp"

namespace bfica {

struct Whitening {
  Matrix white_scores;  // n x q, n^-1 Zw^T Zw = I
  Matrix whitener;      // sqrt(n) (Z^T Z)^-1/2, symmetric
};

inline Whitening whiten(const Matrix& scores) {
  const Index n = scores.rows();
  if (n == 0 || scores.cols() == 0) throw Error(Errc::invalid_input, "whiten: empty score matrix");
  if (!scores.allFinite()) throw Error(Errc::invalid_input, "whiten: non-finite scores");
  const Matrix gram = linalg::symmetrize(scores.transpose() * scores);
  Whitening w;
  w.whitener = linalg::symmetrize(std::sqrt(static_cast<double>(n)) *
                                  linalg::symmetric_inverse_sqrt(gram, 1e-12, Errc::whitening_singular,
                                                                 "whitening (reduce q)"));
  w.white_scores = scores * w.whitener;
  return w;
}

/// n^-1 sum_i |z_i|^2 z_i z_i^T of the whitened rows; filled from the upper
/// triangle so the result is exactly symmetric.
inline Matrix kurtosis_matrix(const Matrix& white_scores) {
  if (!white_scores.allFinite()) throw Error(Errc::invalid_input, "kurtosis_matrix: non-finite scores");
  const Index n = white_scores.rows();
  const Index q = white_scores.cols();
  if (n == 0) throw Error(Errc::invalid_input, "kurtosis_matrix: no rows");
  const Vector norms = white_scores.rowwise().squaredNorm();
  const Matrix weighted = white_scores.array().colwise() * norms.array();
  Matrix k = white_scores.transpose() * weighted / static_cast<double>(n);
  for (Index c = 0; c < q; ++c) {
    for (Index r = c + 1; r < q; ++r) k(r, c) = k(c, r);
  }
  return k;
}

struct KurtosisEigen {
  Vector values;    // rho_1 >= ... >= rho_q
  Matrix rotation;  // orthogonal, columns u_l
};

inline KurtosisEigen kurtosis_eigen(const Matrix& kurt) {
  if (kurt.rows() != kurt.cols()) throw Error(Errc::invalid_input, "kurtosis matrix is not square");
  if (!kurt.allFinite()) throw Error(Errc::invalid_input, "kurtosis matrix has non-finite entries");
  const double scale = std::max(1.0, kurt.cwiseAbs().maxCoeff());
  if ((kurt - kurt.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(Errc::invalid_input, "kurtosis matrix is not symmetric");
  }
  linalg::SymmetricEigen e = linalg::symmetric_eigen(kurt);
  return {std::move(e.values), std::move(e.vectors)};
}

/// Kurtosis-operator ICA of the first q smoothed principal components.
struct FicaModel {
  Index q = 0;
  Matrix whitener;             // q x q
  Matrix white_scores;         // n x q
  Vector kurtosis_eigenvalues; // rho, descending
  Matrix rotation;             // U, q x q
  Matrix psi_coefs;            // p x q, C_psi = B_beta U
  Matrix component_scores;     // n x q, zeta = A G C_psi
  Matrix white_components;     // n x q, Zw U
  bool projected_with_mean = false;

  /// Component order by distance from the Gaussian value q+2, largest first.
  std::vector<Index> by_gaussian_distance() const {
    std::vector<Index> order(static_cast<std::size_t>(q));
    std::iota(order.begin(), order.end(), Index{0});
    const double gauss = static_cast<double>(q) + 2.0;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return std::abs(kurtosis_eigenvalues(a) - gauss) > std::abs(kurtosis_eigenvalues(b) - gauss);
    });
    return order;
  }

  /// Component with the most extreme kurtosis.
  Index extreme_component() const { return by_gaussian_distance().front(); }
};

/// Whitening, kurtosis matrix and its eigendecomposition on the first q
/// scores of `model`. `coefs` are the curves projected to obtain zeta.
inline FicaModel build_fica(const FpcaModel& model, const Matrix& coefs, const Matrix& gram, Index q) {
  if (q < 1 || q > model.retained()) {
    throw Error(Errc::invalid_configuration, "q=" + std::to_string(q) + " outside 1.." +
                                                 std::to_string(model.retained()));
  }
  if (coefs.cols() != model.beta_coefs.rows() || gram.rows() != coefs.cols()) {
    throw Error(Errc::invalid_input, "build_fica: dimension mismatch");
  }
  FicaModel f;
  f.q = q;
  const Whitening w = whiten(model.scores.leftCols(q));
  f.whitener = w.whitener;
  f.white_scores = w.white_scores;
  const KurtosisEigen ke = kurtosis_eigen(kurtosis_matrix(f.white_scores));
  f.kurtosis_eigenvalues = ke.values;
  f.rotation = ke.rotation;
  f.psi_coefs = model.beta_coefs.leftCols(q) * f.rotation;
  f.component_scores = coefs * gram * f.psi_coefs;
  f.white_components = f.white_scores * f.rotation;
  return f;
}

/// With `with_mean` the mean curve is restored before projecting onto psi.
inline FicaModel build_fica(const FpcaModel& model, const BasisExpansion& expansion, Index q,
                            bool with_mean = false) {
  FicaModel f = with_mean ? build_fica(model, expansion.uncentered(), expansion.basis->gram(), q)
                          : build_fica(model, expansion.coefs, expansion.basis->gram(), q);
  f.projected_with_mean = with_mean && expansion.centered;
  return f;
}

/// The FICA operator Gamma: projects a curve on the smoothed weight functions,
/// whitens, rotates by U^T and returns B-spline coefficients of
/// sum_l c_l beta_l with c = U^T Sigma^-1/2 z.
inline Vector gamma_transform(const FicaModel& fica, const FpcaModel& model, const Matrix& gram,
                              const Vector& curve_coefs) {
  const Index p = model.weight_coefs.rows();
  if (curve_coefs.size() != p || gram.rows() != p || fica.q > model.retained()) {
    throw Error(Errc::invalid_input, "gamma_transform: dimension mismatch");
  }
  const Index q = fica.q;
  const Vector z = model.weight_coefs.leftCols(q).transpose() * (gram * curve_coefs);
  const Vector c = fica.rotation.transpose() * (fica.whitener * z);
  return model.beta_coefs.leftCols(q) * c;
}

inline Vector gamma_transform(const FicaModel& fica, const FpcaModel& model, const BasisSystem& basis,
                              const Vector& curve_coefs) {
  return gamma_transform(fica, model, basis.gram(), curve_coefs);
}

}  // namespace bfica
