#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bfica/basis.hpp"
#include "bfica/cleanse.hpp"
#include "bfica/error.hpp"
#include "bfica/fica.hpp"
#include "bfica/format.hpp"
#include "bfica/fpca.hpp"
#include "bfica/io_json.hpp"
#include "bfica/signal.hpp"
#include "bfica/synth.hpp"
#include "bfica/tuning.hpp"

namespace bfica {

/// An Error tagged with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& e) : Error(e.code(), e.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const std::bad_alloc&) {
    throw StageError(stage, Error(Errc::degenerate_data, "out of memory"));
  }
}

// ---------------------------------------------------------------------------
// Input

inline CsvTable read_csv_file(const std::string& path) {
  if (path == "-") return parse_curve_csv(std::cin, "stdin");
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open '" + path + "'");
  return parse_curve_csv(in, path);
}

inline SignalSample read_sample(const std::string& values_path, const std::optional<std::string>& times_path = {}) {
  const CsvTable values = read_csv_file(values_path);
  std::optional<CsvTable> times;
  if (times_path) times = read_csv_file(*times_path);
  return make_sample(values, times);
}

/// True sources embedded by `fica synth` as "#source,<k>,<brain|artifact>,v1,..." lines.
struct EmbeddedTruth {
  Matrix sources;
  std::vector<bool> is_artifact;
};

inline std::optional<EmbeddedTruth> embedded_truth(const std::vector<std::string>& comments) {
  std::vector<std::vector<double>> rows;
  std::vector<bool> artifact;
  for (const auto& c : comments) {
    const std::string_view v = trim(c);
    if (v.rfind("source,", 0) != 0) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = v.find(',', start);
      fields.push_back(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 4) throw Error(Errc::invalid_input, "malformed #source line");
    std::vector<double> row;
    for (std::size_t k = 3; k < fields.size(); ++k) {
      double x = 0.0;
      if (!parse_double(fields[k], x)) throw Error(Errc::invalid_input, "malformed #source value");
      row.push_back(x);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(Errc::invalid_input, "#source lines differ in length");
    }
    artifact.push_back(trim(fields[2]) == "artifact");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return std::nullopt;
  EmbeddedTruth t;
  t.sources.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) t.sources.row(static_cast<Index>(r)) = to_vector(rows[r]).transpose();
  t.is_artifact = std::move(artifact);
  return t;
}

/// Synthetic sample in the curve CSV format with the true sources as comments.
inline void write_synth_csv(std::ostream& out, const MixtureSpec& spec, const SynthResult& r) {
  out << "#synth,seed=" << spec.seed << ",channels=" << spec.n_channels << ",samples=" << spec.n_samples
      << ",sources=" << spec.n_sources << ",artifacts=" << spec.artifact_count
      << ",kind=" << to_string(spec.artifact_kind) << ",snr_db=" << format_number(spec.snr_db) << '\n';
  const Index first_artifact = r.truth.first_artifact();
  for (Index s = 0; s < r.truth.sources.rows(); ++s) {
    out << "#source," << (s + 1) << ',' << (s >= first_artifact ? "artifact" : "brain");
    for (Index k = 0; k < r.truth.sources.cols(); ++k) out << ',' << format_number(r.truth.sources(s, k));
    out << '\n';
  }
  write_curve_csv(out, r.sample.values, r.sample.labels);
}

// ---------------------------------------------------------------------------
// Stages

struct FitConfig {
  Index p = 230;
  int order = 4;
  int penalty_order = 2;
  bool center = true;

  void validate() const {
    if (order < 1) throw Error(Errc::invalid_configuration, "order must be >= 1");
    if (p < order) {
      throw Error(Errc::invalid_configuration, "p=" + std::to_string(p) + " must be >= order=" + std::to_string(order));
    }
    if (penalty_order < 0 || penalty_order >= p) {
      throw Error(Errc::invalid_configuration, "penalty order must satisfy 0 <= d < p");
    }
  }
};

inline BasisExpansion fit_stage(const SignalSample& sample, const FitConfig& cfg) {
  cfg.validate();
  sample.validate();
  auto basis = std::make_shared<const BasisSystem>(make_basis(sample.domain(), cfg.p, cfg.order, cfg.penalty_order));
  return fit_coefficients(sample, basis, cfg.center);
}

struct Decomposition {
  double lambda = 0.0;
  Index q = 1;
  bool shrink = false;
  FpcaModel fpca;
  FicaModel fica;
};

inline Decomposition decompose(const BasisExpansion& expansion, double lambda, Index q,
                               ShrinkMode mode = ShrinkMode::automatic) {
  Decomposition d;
  d.lambda = lambda;
  d.q = q;
  d.shrink = resolve_shrink(mode, expansion.n(), expansion.p());
  d.fpca = penalized_fpca(expansion.coefs, expansion.basis->metric(),
                          FpcaOptions{lambda, q, d.shrink, expansion.centered});
  if (d.fpca.retained() < q) {
    throw Error(Errc::invalid_configuration, "only " + std::to_string(d.fpca.retained()) +
                                                 " positive eigenvalues at lambda=" + format_number(lambda) +
                                                 "; reduce q");
  }
  d.fica = build_fica(d.fpca, expansion, q);
  return d;
}

/// Headline numbers of one decomposition.
struct Summary {
  Index j0 = 1;
  Index q = 1;
  double lambda = 0.0;
  double log_bcv = 0.0;
  double var_pct_lambda = 0.0;
  double var_pct_lambda0 = 0.0;
};

inline Summary summarize(const BasisExpansion& expansion, const Decomposition& d,
                         const std::optional<TuningResult>& tuning, double ell) {
  Summary s;
  s.q = d.q;
  s.lambda = d.lambda;
  const ShrinkMode fixed = d.shrink ? ShrinkMode::on : ShrinkMode::off;
  if (tuning && tuning->q_star == d.q && tuning->lambda_star == d.lambda) {
    s.j0 = tuning->j0;
    s.log_bcv = tuning->log_bcv_star;
    s.var_pct_lambda = tuning->var_pct_lambda;
    s.var_pct_lambda0 = tuning->var_pct_lambda0;
    return s;
  }
  const Index bound = max_components(expansion.n(), expansion.p(), expansion.centered, d.shrink);
  const FpcaModel base = penalized_fpca(expansion.coefs, expansion.basis->metric(),
                                        FpcaOptions{0.0, bound, d.shrink, expansion.centered});
  s.j0 = base.retained() >= 3 ? select_truncation(base.eigenvalues).j0 : 1;
  const double grid[1] = {d.lambda};
  s.log_bcv = std::log(baseline_cv(expansion, d.q, grid, ell, fixed).front());
  s.var_pct_lambda = cumulative_variance_pct(expansion, d.lambda, d.q, d.shrink);
  s.var_pct_lambda0 = 100.0 * base.eigenvalues.head(std::min(d.q, base.retained())).sum() / base.total_variance;
  return s;
}

inline json summary_json(const Summary& s) {
  return json{{"j0", s.j0},
              {"q", s.q},
              {"lambda", number_json(s.lambda, Precision::report)},
              {"log_bcv", number_json(s.log_bcv, Precision::report)},
              {"var_pct_lambda", number_json(s.var_pct_lambda, Precision::report)},
              {"var_pct_lambda0", number_json(s.var_pct_lambda0, Precision::report)}};
}

inline void write_summary_csv(std::ostream& out, const Summary& s) {
  out << "j0,q,lambda,log_bcv,var_pct_lambda,var_pct_lambda0\n"
      << s.j0 << ',' << s.q << ',' << format_number(s.lambda) << ',' << format_number(s.log_bcv) << ','
      << format_number(s.var_pct_lambda) << ',' << format_number(s.var_pct_lambda0) << '\n';
}

/// (q, lambda, BCV[, CV]) rows of the tuning surface.
inline void write_surface_csv(std::ostream& out, const TuningResult& r) {
  out << "q,lambda,bcv" << (r.cv ? ",cv" : "") << '\n';
  for (std::size_t qi = 0; qi < r.q_values.size(); ++qi) {
    for (std::size_t k = 0; k < r.lambda_grid.size(); ++k) {
      out << r.q_values[qi] << ',' << format_number(r.lambda_grid[k]) << ','
          << format_number(r.bcv(static_cast<Index>(qi), static_cast<Index>(k)));
      if (r.cv) out << ',' << format_number((*r.cv)(static_cast<Index>(qi), static_cast<Index>(k)));
      out << '\n';
    }
  }
}

/// Channel x component score table (the data of a topographic map).
inline void write_components_csv(std::ostream& out, const FicaModel& f, const SignalSample& sample) {
  out << "channel";
  for (Index l = 0; l < f.q; ++l) out << ",IC" << (l + 1);
  out << '\n';
  for (Index i = 0; i < f.component_scores.rows(); ++i) {
    out << sample.curve_name(static_cast<std::size_t>(i));
    for (Index l = 0; l < f.q; ++l) out << ',' << format_number(f.component_scores(i, l));
    out << '\n';
  }
}

inline json decomposition_json(const Decomposition& d) {
  return json{{"lambda", number_json(d.lambda, Precision::exact)},
              {"q", d.q},
              {"shrink", d.shrink},
              {"fpca", fpca_json(d.fpca)},
              {"fica", fica_json(d.fica)}};
}

/// 64-bit FNV-1a, used to fingerprint fitted models.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string model_hash(const Decomposition& d) { return fnv1a_hex(decomposition_json(d).dump()); }

// ---------------------------------------------------------------------------
// Selection

/// all | none | comma-separated 1-based indices | kurtosis:T (|rho - (q+2)| >= T)
struct SelectionSpec {
  enum class Mode { all, none, indices, kurtosis };
  Mode mode = Mode::all;
  std::vector<Index> indices;  // 1-based as written
  double threshold = 0.0;

  std::string to_string() const {
    switch (mode) {
      case Mode::all: return "all";
      case Mode::none: return "none";
      case Mode::kurtosis: return "kurtosis:" + format_number(threshold);
      case Mode::indices: break;
    }
    std::string s;
    for (std::size_t k = 0; k < indices.size(); ++k) s += (k ? "," : "") + std::to_string(indices[k]);
    return s;
  }
};

inline SelectionSpec parse_selection(const std::string& text) {
  SelectionSpec s;
  const std::string_view v = trim(text);
  if (v == "all") return s;
  if (v == "none" || v.empty()) {
    s.mode = SelectionSpec::Mode::none;
    return s;
  }
  if (v.rfind("kurtosis:", 0) == 0) {
    s.mode = SelectionSpec::Mode::kurtosis;
    if (!parse_double(v.substr(9), s.threshold) || !(s.threshold >= 0.0)) {
      throw Error(Errc::invalid_selection, "kurtosis threshold must be a number >= 0");
    }
    return s;
  }
  s.mode = SelectionSpec::Mode::indices;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    const std::string_view tok = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    long long k = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), k);
    if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw Error(Errc::invalid_selection, "cannot parse selection '" + std::string(v) + "'");
    }
    s.indices.push_back(static_cast<Index>(k));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return s;
}

/// 0-based component indices, ascending.
inline std::vector<Index> resolve_selection(const SelectionSpec& s, const FicaModel& f) {
  std::vector<Index> out;
  switch (s.mode) {
    case SelectionSpec::Mode::all:
      for (Index l = 0; l < f.q; ++l) out.push_back(l);
      break;
    case SelectionSpec::Mode::none:
      break;
    case SelectionSpec::Mode::kurtosis: {
      const double gauss = static_cast<double>(f.q) + 2.0;
      for (Index l = 0; l < f.q; ++l) {
        if (std::abs(f.kurtosis_eigenvalues(l) - gauss) >= s.threshold) out.push_back(l);
      }
      break;
    }
    case SelectionSpec::Mode::indices:
      for (Index k : s.indices) out.push_back(k - 1);
      validate_selection(out, f.q);
      std::sort(out.begin(), out.end());
      break;
  }
  return out;
}

inline CleanedSignal clean_stage(const BasisExpansion& expansion, const Decomposition& d,
                                 const std::vector<Index>& selection) {
  return subtract(expansion, artifact_expansion(d.fica, selection), selection);
}

inline void write_cleaned_csv(std::ostream& out, const CleanedSignal& cleaned, const BasisExpansion& expansion,
                              const SignalSample& sample) {
  write_curve_csv(out, evaluate_on_sample(cleaned, *expansion.basis, sample, true), sample.labels);
}

inline std::string cleaned_csv(const CleanedSignal& cleaned, const BasisExpansion& expansion,
                               const SignalSample& sample) {
  std::ostringstream out;
  write_cleaned_csv(out, cleaned, expansion, sample);
  return out.str();
}

/// Grid used to display component weight functions: the shared sampling grid
/// when there is one, otherwise a uniform grid over the domain.
inline Vector display_grid(const SignalSample& sample) {
  if (sample.shared_grid()) return sample.times.front();
  Index m = 0;
  for (const auto& t : sample.times) m = std::max(m, t.size());
  return uniform_grid(m, sample.domain());
}

/// Separation metrics against embedded ground truth.
inline json truth_report(const EmbeddedTruth& truth, const Decomposition& d, const BasisExpansion& expansion,
                         const SignalSample& sample) {
  const Vector grid = display_grid(sample);
  if (grid.size() != truth.sources.cols()) {
    throw Error(Errc::invalid_input, "embedded sources do not match the sampling grid");
  }
  const Matrix psi = eval_basis(*expansion.basis, grid) * d.fica.psi_coefs;
  const CorrelationMatch m = match_correlation(psi, truth.sources);
  json assignment = json::array();
  for (std::size_t l = 0; l < m.assignment.size(); ++l) {
    assignment.push_back(json{{"component", l + 1},
                              {"source", m.assignment[l] >= 0 ? json(m.assignment[l] + 1) : json(nullptr)},
                              {"abs_corr", number_json(m.abs_corr[l], Precision::report)}});
  }
  json out{{"mean_abs_corr", number_json(m.mean_abs_corr, Precision::report)}, {"assignment", assignment}};
  const Index extreme = d.fica.extreme_component();
  double best = 0.0;
  for (Index s = 0; s < truth.sources.rows(); ++s) {
    if (!truth.is_artifact[static_cast<std::size_t>(s)]) continue;
    best = std::max(best, abs_correlation(psi.col(extreme), truth.sources.row(s).transpose()));
  }
  out["extreme_component"] = extreme + 1;
  out["extreme_artifact_abs_corr"] = number_json(best, Precision::report);
  return out;
}

}  // namespace bfica
