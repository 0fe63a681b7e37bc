#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "bfica/basis.hpp"
#include "bfica/error.hpp"
#include "bfica/fica.hpp"

namespace bfica {

/// Checks a 0-based component selection against q; duplicates are rejected.
inline void validate_selection(std::span<const Index> selection, Index q) {
  std::vector<Index> seen(selection.begin(), selection.end());
  std::sort(seen.begin(), seen.end());
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (seen[k] < 0 || seen[k] >= q) {
      throw Error(Errc::invalid_selection,
                  "component " + std::to_string(seen[k] + 1) + " outside 1.." + std::to_string(q));
    }
    if (k > 0 && seen[k] == seen[k - 1]) {
      throw Error(Errc::invalid_selection, "component " + std::to_string(seen[k] + 1) + " selected twice");
    }
  }
}

/// zeta[:, sel] C_psi[:, sel]^T: coefficients of the selected components'
/// contribution to every curve (n x p).
inline Matrix artifact_expansion(const FicaModel& fica, std::span<const Index> selection) {
  validate_selection(selection, fica.q);
  const Index n = fica.component_scores.rows();
  const Index p = fica.psi_coefs.rows();
  Matrix out = Matrix::Zero(n, p);
  for (Index l : selection) out += fica.component_scores.col(l) * fica.psi_coefs.col(l).transpose();
  return out;
}

inline Matrix artifact_expansion(const FicaModel& fica, std::initializer_list<Index> selection) {
  return artifact_expansion(fica, std::span<const Index>(selection.begin(), selection.size()));
}

struct CleanedSignal {
  Matrix clean_coefs;     // D = A - artifact
  Matrix artifact_coefs;  // subtracted part
  std::vector<Index> removed;
  bool centered = false;
  Vector mean_coefs;
};

inline CleanedSignal subtract(const BasisExpansion& expansion, const Matrix& artifact,
                              std::vector<Index> removed = {}) {
  if (artifact.rows() != expansion.n() || artifact.cols() != expansion.p()) {
    throw Error(Errc::invalid_input, "artifact matrix is " + std::to_string(artifact.rows()) + "x" +
                                         std::to_string(artifact.cols()) + ", expected " +
                                         std::to_string(expansion.n()) + "x" + std::to_string(expansion.p()));
  }
  CleanedSignal c;
  c.clean_coefs = expansion.coefs - artifact;
  c.artifact_coefs = artifact;
  c.removed = std::move(removed);
  c.centered = expansion.centered;
  c.mean_coefs = expansion.mean_coefs;
  return c;
}

/// Cleaned curves as an expansion, so that subtractions can be chained.
inline BasisExpansion as_expansion(const CleanedSignal& cleaned, std::shared_ptr<const BasisSystem> basis) {
  BasisExpansion e;
  e.basis = std::move(basis);
  e.coefs = cleaned.clean_coefs;
  e.centered = cleaned.centered;
  e.mean_coefs = cleaned.mean_coefs.size() ? cleaned.mean_coefs : Vector::Zero(cleaned.clean_coefs.cols());
  e.rss = Vector::Zero(cleaned.clean_coefs.rows());
  return e;
}

/// Cleaned curves (plus the stored mean when requested) on a common grid.
inline Matrix evaluate_at(const CleanedSignal& cleaned, const BasisSystem& basis, std::span<const double> times,
                          bool restore_mean) {
  if (cleaned.clean_coefs.cols() != basis.size()) {
    throw Error(Errc::invalid_input, "cleaned coefficients do not match the basis");
  }
  const Interval d = basis.domain();
  const double tol = 1e-12 * d.length();
  std::string bad;
  std::size_t nbad = 0;
  for (double t : times) {
    if (!(t >= d.lo - tol && t <= d.hi + tol)) {
      if (nbad < 10) bad += (nbad ? ", " : "") + format_exact(t);
      ++nbad;
    }
  }
  if (nbad > 0) {
    throw Error(Errc::out_of_domain, std::to_string(nbad) + " point(s) outside [" + format_exact(d.lo) + ", " +
                                         format_exact(d.hi) + "]: " + bad + (nbad > 10 ? ", ..." : ""));
  }
  const Matrix phi = eval_basis(basis, times);
  Matrix coefs = cleaned.clean_coefs;
  if (restore_mean && cleaned.centered) coefs.rowwise() += cleaned.mean_coefs.transpose();
  return coefs * phi.transpose();
}

inline Matrix evaluate_at(const CleanedSignal& cleaned, const BasisSystem& basis, const Vector& times,
                          bool restore_mean) {
  return evaluate_at(cleaned, basis, std::span<const double>(times.data(), static_cast<std::size_t>(times.size())),
                     restore_mean);
}

/// Cleaned curves on each curve's own sampling grid.
inline std::vector<Vector> evaluate_on_sample(const CleanedSignal& cleaned, const BasisSystem& basis,
                                              const SignalSample& sample, bool restore_mean = true) {
  if (static_cast<Index>(sample.size()) != cleaned.clean_coefs.rows()) {
    throw Error(Errc::invalid_input, "sample and cleaned signal disagree on the number of curves");
  }
  std::vector<Vector> out;
  out.reserve(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    Vector a = cleaned.clean_coefs.row(static_cast<Index>(i)).transpose();
    if (restore_mean && cleaned.centered) a += cleaned.mean_coefs;
    out.push_back(eval_basis(basis, sample.times[i]) * a);
  }
  return out;
}

}  // namespace bfica
