#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bfica/basis.hpp"
#include "bfica/error.hpp"
#include "bfica/fpca.hpp"
#include "bfica/parallel.hpp"
#include "bfica/shrinkage.hpp"

namespace bfica {

/// Whether covariance estimates use shrinkage. `automatic` enables it when the
/// basis dimension exceeds the number of curves.
enum class ShrinkMode { automatic, on, off };

inline bool resolve_shrink(ShrinkMode mode, Index n, Index p) {
  switch (mode) {
    case ShrinkMode::on: return true;
    case ShrinkMode::off: return false;
    case ShrinkMode::automatic: break;
  }
  return p > n;
}

/// {0} U {10^k : k = -2..8}
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid{0.0};
  for (int k = -2; k <= 8; ++k) grid.push_back(std::pow(10.0, k));
  return grid;
}

inline void validate_grid(std::span<const double> grid) {
  if (grid.empty()) throw Error(Errc::invalid_configuration, "lambda grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || !std::isfinite(grid[i])) {
      throw Error(Errc::invalid_configuration, "lambda grid values must be finite and >= 0");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw Error(Errc::invalid_configuration, "lambda grid must be strictly ascending");
    }
  }
}

/// Baseline cross-validation values for q = 1..q_max at each grid value.
struct BcvSurface {
  std::vector<double> lambda_grid;
  double ell = 0.1;
  bool shrink = false;
  Matrix values;                      // q_max x |grid|
  std::vector<std::vector<bool>> fallback;  // diagonal-target fallback used, [q][lambda]
};

namespace detail {

/// Residual differences at or below this multiple of the reconstruction
/// magnitude are rounding noise and count as an exact zero.
inline constexpr double kResidualFloor = 1e-13;

struct BcvCell {
  double value = 0.0;
  bool fallback = false;
};

/// n^-1 tr(E^T G E) of the (optionally shrinkage-reconstructed) residual
/// coefficient matrix E (p x n).
inline BcvCell bcv_residual(const Matrix& e, const Matrix& reference, const Matrix& gram, bool shrink) {
  const double n = static_cast<double>(e.cols());
  const double scale = std::max(reference.cwiseAbs().maxCoeff(), 1e-300);
  if (e.cwiseAbs().maxCoeff() <= kResidualFloor * scale) return {0.0, false};
  if (!shrink) return {(gram * e).cwiseProduct(e).sum() / n, false};

  BcvCell cell;
  ShrinkageEstimate cov = shrinkage_covariance(e.transpose());
  Eigen::LLT<Matrix> llt(cov.covariance);
  if (llt.info() != Eigen::Success) {
    cell.fallback = true;
    const Matrix diag = cov.covariance.diagonal().asDiagonal();
    llt.compute(diag);
    if (llt.info() != Eigen::Success) {
      throw Error(Errc::factorization, "baseline CV: residual covariance is singular");
    }
  }
  const Matrix l = llt.matrixL();
  const Matrix rec = l.transpose().triangularView<Eigen::Upper>().solve(e);  // (L^-1)^T e_i
  cell.value = (gram * rec).cwiseProduct(rec).sum() / n;
  return cell;
}

}  // namespace detail

/// Full-sample baseline cross-validation: for each lambda compares the
/// q-term smoothed reconstructions at lambda and lambda + ell.
inline BcvSurface bcv_surface(const BasisExpansion& expansion, Index q_max, std::span<const double> grid,
                              double ell, ShrinkMode mode = ShrinkMode::automatic) {
  validate_grid(grid);
  if (!(ell > 0.0) || !std::isfinite(ell)) throw Error(Errc::invalid_configuration, "ell must be > 0");
  if (q_max < 1) throw Error(Errc::invalid_configuration, "q must be >= 1");
  const bool shrink = resolve_shrink(mode, expansion.n(), expansion.p());
  const Metric& metric = expansion.basis->metric();

  BcvSurface s;
  s.lambda_grid.assign(grid.begin(), grid.end());
  s.ell = ell;
  s.shrink = shrink;
  s.values = Matrix::Zero(q_max, static_cast<Index>(grid.size()));
  s.fallback.assign(static_cast<std::size_t>(q_max), std::vector<bool>(grid.size(), false));

  std::vector<std::vector<detail::BcvCell>> cells(grid.size());
  parallel_for(grid.size(), [&](std::size_t k) {
    const FpcaOptions base{grid[k], q_max, shrink, expansion.centered};
    FpcaOptions bumped = base;
    bumped.lambda = grid[k] + ell;
    const FpcaModel m0 = penalized_fpca(expansion.coefs, metric, base);
    const FpcaModel m1 = penalized_fpca(expansion.coefs, metric, bumped);
    if (m0.retained() < q_max || m1.retained() < q_max) {
      throw Error(Errc::invalid_configuration,
                  "q=" + std::to_string(q_max) + " exceeds the number of positive eigenvalues at lambda=" +
                      format_exact(grid[k]));
    }
    std::vector<detail::BcvCell> column;
    for (Index q = 1; q <= q_max; ++q) {
      const Matrix a0 = m0.beta_coefs.leftCols(q) * m0.scores.leftCols(q).transpose();
      const Matrix a1 = m1.beta_coefs.leftCols(q) * m1.scores.leftCols(q).transpose();
      const Matrix ref = a0.cwiseAbs().cwiseMax(a1.cwiseAbs());
      column.push_back(detail::bcv_residual(a0 - a1, ref, metric.gram, shrink));
    }
    cells[k] = std::move(column);
  });

  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (Index q = 0; q < q_max; ++q) {
      s.values(q, static_cast<Index>(k)) = cells[k][static_cast<std::size_t>(q)].value;
      s.fallback[static_cast<std::size_t>(q)][k] = cells[k][static_cast<std::size_t>(q)].fallback;
    }
  }
  return s;
}

/// BCV(lambda) at a fixed q for every grid value.
inline std::vector<double> baseline_cv(const BasisExpansion& expansion, Index q, std::span<const double> grid,
                                       double ell = 0.1, ShrinkMode mode = ShrinkMode::automatic) {
  const BcvSurface s = bcv_surface(expansion, q, grid, ell, mode);
  std::vector<double> out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) out[k] = s.values(q - 1, static_cast<Index>(k));
  return out;
}

/// Leave-one-out cross-validation n^-1 sum_i |x_i - x_i^{q(-i)}|^2. The
/// Cholesky factor and smoothing operator depend only on lambda and are
/// shared across held-out curves; the covariance is downdated per curve.
inline std::vector<double> classical_cv(const BasisExpansion& expansion, Index q, std::span<const double> grid,
                                        bool shrink = false) {
  validate_grid(grid);
  const Index n = expansion.n();
  const Index p = expansion.p();
  if (n < 3) throw Error(Errc::insufficient_sample, "classical CV needs at least 3 curves");
  if (q < 1 || q > max_components(n - 1, p, expansion.centered, shrink)) {
    throw Error(Errc::invalid_configuration, "q=" + std::to_string(q) + " not admissible for held-out fits");
  }
  const Metric& metric = expansion.basis->metric();
  const Matrix& a = expansion.coefs;
  const Matrix full_cross = a.transpose() * a;
  const Matrix gt = metric.gram * metric.rotation;

  std::vector<double> out(grid.size(), 0.0);
  parallel_for(grid.size(), [&](std::size_t k) {
    const double lambda = grid[k];
    Eigen::LLT<Matrix> llt(metric.penalized(lambda));
    if (llt.info() != Eigen::Success) throw Error(Errc::factorization, "G + lambda P is not positive definite");
    const Matrix l = llt.matrixL();
    const auto lower = l.triangularView<Eigen::Lower>();
    const SmoothingOperator smoother = smoothing_half_power(metric, lambda);
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      Matrix cov;
      if (shrink) {
        Matrix rest(n - 1, p);
        rest << a.topRows(i), a.bottomRows(n - 1 - i);
        cov = shrinkage_covariance(rest).covariance * (static_cast<double>(n - 2) / static_cast<double>(n - 1));
      } else {
        cov = (full_cross - a.row(i).transpose() * a.row(i)) / static_cast<double>(n - 1);
      }
      const Matrix gsg = linalg::symmetrize(gt.transpose() * cov * gt);
      const Matrix half = lower.solve(gsg);
      const linalg::SymmetricEigen e = linalg::symmetric_eigen(linalg::symmetrize(lower.solve(half.transpose())));
      if (!(e.values(0) > 0.0) || e.values(q - 1) <= 1e-12 * e.values(0)) {
        throw Error(Errc::degenerate_data, "held-out covariance has fewer than q positive eigenvalues");
      }
      const Matrix b = l.transpose().triangularView<Eigen::Upper>().solve(e.vectors.leftCols(q));
      const Vector ai = a.row(i).transpose();
      const Vector z = b.transpose() * (gt.transpose() * ai);
      const Vector resid = ai - metric.rotation * (smoother.inverse_half_power_rot * (b * z));
      total += resid.dot(metric.gram * resid);
    }
    out[k] = total / static_cast<double>(n);
  });
  return out;
}

struct Truncation {
  Index j0 = 1;          // 1-based
  bool fallback = false;  // no relative maximum found
};

/// First relative maximum of the eigenvalue gaps d_j = eta_j - eta_{j+1};
/// j = 1 counts as a maximum when d_1 > d_2.
inline Truncation select_truncation(std::span<const double> eigenvalues) {
  if (eigenvalues.size() < 3) throw Error(Errc::invalid_input, "j0 rule needs at least 3 eigenvalues");
  const std::size_t m = eigenvalues.size() - 1;
  std::vector<double> d(m);
  for (std::size_t j = 0; j < m; ++j) d[j] = eigenvalues[j] - eigenvalues[j + 1];
  for (std::size_t j = 0; j + 1 < m; ++j) {
    if (d[j] > d[j + 1] && (j == 0 || d[j] > d[j - 1])) return {static_cast<Index>(j + 1), false};
  }
  return {static_cast<Index>(eigenvalues.size() - 1), true};
}

inline Truncation select_truncation(const Vector& eigenvalues) {
  return select_truncation(std::span<const double>(eigenvalues.data(), static_cast<std::size_t>(eigenvalues.size())));
}

struct TuningResult {
  std::vector<double> lambda_grid;
  double ell = 0.1;
  bool shrink = false;
  std::vector<Index> q_values;  // rows of bcv
  Matrix bcv;                   // |q_values| x |grid|
  std::optional<Matrix> cv;
  Index j0 = 1;
  bool j0_fallback = false;
  Index q_star = 1;
  double lambda_star = 0.0;
  double bcv_star = 0.0;
  double log_bcv_star = 0.0;
  bool residual_fallback = false;
  double var_pct_lambda = 0.0;   // cumulative variance at (q*, lambda*)
  double var_pct_lambda0 = 0.0;  // cumulative variance at (q*, 0)
};

/// Cumulative variance percentage of the first q eigenvalues at lambda.
inline double cumulative_variance_pct(const BasisExpansion& expansion, double lambda, Index q, bool shrink) {
  const Index bound = max_components(expansion.n(), expansion.p(), expansion.centered, shrink);
  const FpcaModel m = penalized_fpca(expansion.coefs, expansion.basis->metric(),
                                     FpcaOptions{lambda, bound, shrink, expansion.centered});
  const Index take = std::min(q, m.retained());
  return 100.0 * m.eigenvalues.head(take).sum() / m.total_variance;
}

struct TuneOptions {
  double ell = 0.1;
  ShrinkMode shrink = ShrinkMode::automatic;
  std::optional<Index> q;  // fix q instead of scanning 1..j0
  bool with_cv = false;
};

/// j0 from the lambda = 0 eigenvalues, then the (q, lambda) cell with the
/// smallest BCV over q = 1..j0 (ties: smaller q, then smaller lambda).
inline TuningResult tune(const BasisExpansion& expansion, std::span<const double> grid,
                         const TuneOptions& opt = {}) {
  validate_grid(grid);
  const bool shrink = resolve_shrink(opt.shrink, expansion.n(), expansion.p());
  const ShrinkMode fixed = shrink ? ShrinkMode::on : ShrinkMode::off;

  TuningResult r;
  r.lambda_grid.assign(grid.begin(), grid.end());
  r.ell = opt.ell;
  r.shrink = shrink;

  const Index bound = max_components(expansion.n(), expansion.p(), expansion.centered, shrink);
  if (bound < 1) throw Error(Errc::insufficient_sample, "not enough curves for FPCA");
  const FpcaModel base = penalized_fpca(expansion.coefs, expansion.basis->metric(),
                                        FpcaOptions{0.0, bound, shrink, expansion.centered});
  const Truncation t = select_truncation(base.eigenvalues);
  r.j0 = t.j0;
  r.j0_fallback = t.fallback;

  Index q_lo = 1;
  Index q_hi = r.j0;
  if (opt.q) {
    q_lo = q_hi = *opt.q;
  }
  const BcvSurface s = bcv_surface(expansion, q_hi, grid, opt.ell, fixed);
  r.bcv = s.values.bottomRows(q_hi - q_lo + 1);
  for (Index q = q_lo; q <= q_hi; ++q) r.q_values.push_back(q);
  for (const auto& row : s.fallback) {
    for (bool f : row) r.residual_fallback = r.residual_fallback || f;
  }

  double best = std::numeric_limits<double>::infinity();
  for (Index qi = 0; qi < r.bcv.rows(); ++qi) {
    for (Index k = 0; k < r.bcv.cols(); ++k) {
      if (r.bcv(qi, k) < best) {
        best = r.bcv(qi, k);
        r.q_star = r.q_values[static_cast<std::size_t>(qi)];
        r.lambda_star = grid[static_cast<std::size_t>(k)];
      }
    }
  }
  r.bcv_star = best;
  r.log_bcv_star = std::log(best);

  if (opt.with_cv) {
    Matrix cv(r.bcv.rows(), r.bcv.cols());
    for (Index qi = 0; qi < cv.rows(); ++qi) {
      const std::vector<double> row = classical_cv(expansion, r.q_values[static_cast<std::size_t>(qi)], grid, shrink);
      for (Index k = 0; k < cv.cols(); ++k) cv(qi, k) = row[static_cast<std::size_t>(k)];
    }
    r.cv = cv;
  }

  r.var_pct_lambda = cumulative_variance_pct(expansion, r.lambda_star, r.q_star, shrink);
  r.var_pct_lambda0 = 100.0 * base.eigenvalues.head(std::min(r.q_star, base.retained())).sum() / base.total_variance;
  return r;
}

}  // namespace bfica
