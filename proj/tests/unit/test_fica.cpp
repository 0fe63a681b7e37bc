#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace bfica;

namespace {

/// n x q matrix with n^-1 Z^T Z = I exactly (up to rounding).
Matrix white_matrix(Index n, Index q, std::uint64_t seed) {
  const Matrix x = oracle::gaussian_matrix(n, q, seed);
  Eigen::HouseholderQR<Matrix> qr(x);
  return std::sqrt(static_cast<double>(n)) * Matrix(qr.householderQ() * Matrix::Identity(n, q));
}

BasisExpansion expansion_from(const Matrix& coefs, Index p) {
  BasisExpansion e;
  e.basis = std::make_shared<const BasisSystem>(make_basis({0, 1}, p, 4));
  e.mean_coefs = coefs.colwise().mean().transpose();
  e.coefs = coefs.rowwise() - e.mean_coefs.transpose();
  e.centered = true;
  e.rss = Vector::Zero(coefs.rows());
  return e;
}

}  // namespace

TEST_CASE("already white scores have the identity whitener", "[fica][whiten]") {
  const Matrix z = white_matrix(300, 4, 1);
  const Whitening w = whiten(z);
  REQUIRE(oracle::max_abs(w.whitener - Matrix::Identity(4, 4)) < 1e-10);
  REQUIRE(oracle::max_abs(w.white_scores - z) < 1e-10);
}

TEST_CASE("diagonal score covariance gives the inverse root", "[fica][whiten]") {
  Matrix z = white_matrix(500, 2, 2);
  z.col(0) *= 2.0;
  const Whitening w = whiten(z);
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 0.5;
  expected(1, 1) = 1.0;
  REQUIRE(oracle::max_abs(w.whitener - expected) < 1e-10);
}

TEST_CASE("whitened random scores have identity covariance", "[fica][whiten]") {
  const Matrix z = oracle::gaussian_matrix(200, 5, 3) * oracle::gaussian_matrix(5, 5, 4);
  const Whitening w = whiten(z);
  REQUIRE(oracle::max_abs(w.white_scores.transpose() * w.white_scores / 200.0 - Matrix::Identity(5, 5)) < 1e-8);
  Eigen::SelfAdjointEigenSolver<Matrix> es(z.transpose() * z);
  const Matrix ref = std::sqrt(200.0) * es.eigenvectors() *
                     es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  REQUIRE(oracle::max_abs(w.whitener - ref) < 1e-8 * oracle::max_abs(ref));
  REQUIRE(oracle::max_abs(w.whitener - w.whitener.transpose()) == 0.0);
}

TEST_CASE("collinear scores cannot be whitened", "[fica][whiten]") {
  Matrix z = oracle::gaussian_matrix(50, 3, 5);
  z.col(2) = z.col(0) - 2.0 * z.col(1);
  try {
    whiten(z);
    FAIL("expected an error");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::whitening_singular);
  }
}

TEST_CASE("kurtosis matrix of alternating unit values", "[fica][kurtosis]") {
  Matrix z(6, 1);
  z << 1, -1, 1, -1, 1, -1;
  REQUIRE(kurtosis_matrix(z)(0, 0) == 1.0);
}

TEST_CASE("kurtosis matrix is exactly symmetric and matches the direct sum", "[fica][kurtosis]") {
  const Matrix z = oracle::gaussian_matrix(97, 5, 6);
  const Matrix k = kurtosis_matrix(z);
  REQUIRE((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Matrix ref = Matrix::Zero(5, 5);
  for (Index i = 0; i < 97; ++i) {
    const Vector r = z.row(i).transpose();
    ref += r.squaredNorm() * r * r.transpose();
  }
  ref /= 97.0;
  REQUIRE(oracle::max_abs(k - ref) < 1e-12 * oracle::max_abs(ref));
}

TEST_CASE("Gaussian fourth moments are near (q+2) I", "[fica][kurtosis]") {
  const Matrix z = oracle::gaussian_matrix(100000, 3, 7);
  const Matrix k = kurtosis_matrix(z);
  REQUIRE(oracle::max_abs(k - 5.0 * Matrix::Identity(3, 3)) < 0.15);
}

TEST_CASE("isotropic kurtosis has the identity rotation", "[fica][kurtosis]") {
  const KurtosisEigen e = kurtosis_eigen(5.0 * Matrix::Identity(4, 4));
  REQUIRE(e.values == Vector::Constant(4, 5.0));
  REQUIRE(e.rotation == Matrix::Identity(4, 4));
}

TEST_CASE("diagonal kurtosis is already diagonalized", "[fica][kurtosis]") {
  Matrix k = Matrix::Zero(3, 3);
  k.diagonal() << 9, 3, 1;
  const KurtosisEigen e = kurtosis_eigen(k);
  REQUIRE(oracle::max_abs(e.values - Vector(k.diagonal())) < 1e-14);
  REQUIRE(oracle::max_abs(e.rotation - Matrix::Identity(3, 3)) < 1e-14);
}

TEST_CASE("kurtosis eigendecomposition reconstructs a random symmetric matrix", "[fica][kurtosis]") {
  const Matrix x = oracle::gaussian_matrix(6, 6, 8);
  const Matrix k = x + x.transpose();
  const KurtosisEigen e = kurtosis_eigen(k);
  REQUIRE((e.rotation * e.values.asDiagonal() * e.rotation.transpose() - k).norm() < 1e-8);
  for (Index j = 1; j < 6; ++j) REQUIRE(e.values(j) <= e.values(j - 1));
  REQUIRE_THROWS_AS(kurtosis_eigen(x), Error);
}

TEST_CASE("Gaussian coefficient data has concentrated kurtosis eigenvalues", "[fica]") {
  const BasisExpansion e = expansion_from(oracle::gaussian_matrix(10000, 8, 9), 8);
  const FpcaModel m = penalized_fpca(e, 0.5, 4);
  const FicaModel f = build_fica(m, e, 4);
  const double spread = f.kurtosis_eigenvalues(0) - f.kurtosis_eigenvalues(3);
  REQUIRE(spread < 0.5);
  REQUIRE(std::abs(f.kurtosis_eigenvalues.mean() - 6.0) < 0.5);
}

TEST_CASE("a heavy-tailed source is found by the extreme component", "[fica]") {
  const Index n = 5000;
  const Index p = 6;
  std::mt19937_64 rng(10);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  Matrix sources = oracle::gaussian_matrix(n, p, 11);
  for (Index i = 0; i < n; ++i) sources(i, 2) = (coin(rng) ? 1.0 : -1.0) * expo(rng) / std::sqrt(2.0);
  Eigen::HouseholderQR<Matrix> qr(oracle::gaussian_matrix(p, p, 12));
  const Matrix q = qr.householderQ();
  const BasisExpansion e = expansion_from(sources * q.transpose(), p);
  const FpcaModel m = penalized_fpca(e, 0.0, p);
  const FicaModel f = build_fica(m, e, p);
  const Index l = f.extreme_component();
  REQUIRE(l == 0);
  REQUIRE(f.kurtosis_eigenvalues(0) > 8.0 + 2.0);
  REQUIRE(abs_correlation(f.component_scores.col(l), sources.col(2)) > 0.9);
}

TEST_CASE("white components have identity covariance", "[fica]") {
  const BasisExpansion e = expansion_from(oracle::gaussian_matrix(300, 10, 13), 10);
  const FpcaModel m = penalized_fpca(e, 4.0, 5);
  const FicaModel f = build_fica(m, e, 5);
  REQUIRE(oracle::max_abs(f.white_components.transpose() * f.white_components / 300.0 - Matrix::Identity(5, 5)) <
          1e-8);
  REQUIRE(oracle::max_abs(f.psi_coefs - m.beta_coefs.leftCols(5) * f.rotation) < 1e-14);
  REQUIRE(oracle::max_abs(f.component_scores - e.coefs * e.basis->gram() * f.psi_coefs) < 1e-12);
}

TEST_CASE("gamma reproduces the white component coordinates of every curve", "[fica][gamma]") {
  const BasisExpansion e = expansion_from(oracle::gaussian_matrix(120, 12, 14), 12);
  const FpcaModel m = penalized_fpca(e, 2.5, 6);
  const FicaModel f = build_fica(m, e, 6);
  const Matrix& g = e.basis->gram();
  const Matrix bq = m.beta_coefs.leftCols(6);
  for (Index i = 0; i < e.n(); ++i) {
    const Vector out = gamma_transform(f, m, *e.basis, e.coefs.row(i).transpose());
    const Vector coords = bq.transpose() * g * out;
    REQUIRE(oracle::max_abs(coords - f.white_components.row(i).transpose()) < 1e-8);
  }
}

TEST_CASE("gamma is the identity on the span of beta when nothing rotates", "[fica][gamma]") {
  const BasisExpansion e = expansion_from(oracle::gaussian_matrix(60, 9, 15), 9);
  const FpcaModel m = penalized_fpca(e, 0.0, 4);
  FicaModel f;
  f.q = 4;
  f.whitener = Matrix::Identity(4, 4);
  f.rotation = Matrix::Identity(4, 4);
  for (Index j = 0; j < 4; ++j) {
    const Vector beta = m.beta_coefs.col(j);
    REQUIRE(oracle::max_abs(gamma_transform(f, m, *e.basis, beta) - beta) < 1e-10);
  }
  REQUIRE(gamma_transform(f, m, *e.basis, Vector::Zero(9)).isZero(0.0));
}

TEST_CASE("components are ordered by distance from the Gaussian value", "[fica]") {
  FicaModel f;
  f.q = 4;
  f.kurtosis_eigenvalues.resize(4);
  f.kurtosis_eigenvalues << 6.5, 6.1, 5.8, 4.0;
  REQUIRE(f.by_gaussian_distance() == std::vector<Index>{3, 0, 2, 1});
  REQUIRE(f.extreme_component() == 3);
}

TEST_CASE("build_fica validates q", "[fica]") {
  const BasisExpansion e = expansion_from(oracle::gaussian_matrix(30, 8, 16), 8);
  const FpcaModel m = penalized_fpca(e, 1.0, 3);
  REQUIRE_THROWS_AS(build_fica(m, e, 4), Error);
  REQUIRE_THROWS_AS(build_fica(m, e, 0), Error);
  const FicaModel with_mean = build_fica(m, e, 3, true);
  REQUIRE(with_mean.projected_with_mean);
  REQUIRE(oracle::max_abs(with_mean.component_scores - e.uncentered() * e.basis->gram() * with_mean.psi_coefs) <
          1e-12);
}
