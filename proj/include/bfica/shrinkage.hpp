#pragma once

#include <algorithm>

#include "bfica/error.hpp"
#include "bfica/linalg.hpp"

namespace bfica {

struct ShrinkageEstimate {
  Matrix covariance;
  double intensity = 0.0;
};

/// Shrinks the unbiased sample covariance of the rows of `data` (n x p)
/// towards its own diagonal with the analytic Schafer-Strimmer intensity
///
///   delta* = sum_{i!=j} Var(s_ij) / sum_{i!=j} s_ij^2,  clipped to [0, 1].
inline ShrinkageEstimate shrinkage_covariance(const Matrix& data) {
  const Index n = data.rows();
  const Index p = data.cols();
  if (n < 3) {
    throw Error(Errc::insufficient_sample,
                "shrinkage covariance needs at least 3 observations, got " + std::to_string(n));
  }
  if (!data.allFinite()) throw Error(Errc::invalid_input, "shrinkage covariance: non-finite data");

  const Matrix centered = data.rowwise() - data.colwise().mean();
  const double nd = static_cast<double>(n);
  const Matrix w_mean = centered.transpose() * centered / nd;
  const Matrix sample = w_mean * (nd / (nd - 1.0));
  if (sample.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(Errc::degenerate_data, "shrinkage covariance: data has no variance");
  }

  double intensity = 0.0;
  if (p > 1) {
    // sum_k w_kij^2 with w_kij = xc_ki xc_kj
    const Matrix sq = centered.cwiseProduct(centered);
    const Matrix w_sq = sq.transpose() * sq;
    const Matrix var_s = (w_sq - nd * w_mean.cwiseProduct(w_mean)) * (nd / ((nd - 1.0) * (nd - 1.0) * (nd - 1.0)));
    double num = 0.0;
    double den = 0.0;
    for (Index j = 0; j < p; ++j) {
      for (Index i = 0; i < p; ++i) {
        if (i == j) continue;
        num += var_s(i, j);
        den += sample(i, j) * sample(i, j);
      }
    }
    if (den > 0.0) intensity = std::clamp(num / den, 0.0, 1.0);
  }

  ShrinkageEstimate out{sample * (1.0 - intensity), intensity};
  out.covariance.diagonal() = sample.diagonal();
  return out;
}

}  // namespace bfica
