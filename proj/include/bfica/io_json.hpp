#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfica/basis.hpp"
#include "bfica/error.hpp"
#include "bfica/fica.hpp"
#include "bfica/format.hpp"
#include "bfica/fpca.hpp"
#include "bfica/tuning.hpp"

namespace bfica {

using json = nlohmann::ordered_json;

/// Report values are rounded to 10 significant digits; state values keep
/// full precision.
enum class Precision { report, exact };

inline json number_json(double v, Precision prec) {
  if (!std::isfinite(v)) return json(format_number(v));
  return json(prec == Precision::report ? round_report(v) : v);
}

inline double json_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    double v = 0.0;
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (parse_double(s, v)) return v;
  }
  throw Error(Errc::invalid_input, "expected a number, got " + j.dump());
}

inline json vector_json(const Vector& v, Precision prec = Precision::report) {
  json a = json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(number_json(v(k), prec));
  return a;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(Errc::invalid_input, "expected a numeric array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Index>(k)) = json_number(j[k]);
  return v;
}

/// {"rows": r, "cols": c, "data": [row-major]}
inline json matrix_json(const Matrix& m, Precision prec = Precision::report) {
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) data.push_back(number_json(m(r, c), prec));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  try {
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const json& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
      throw Error(Errc::invalid_input, "matrix data length does not match its dimensions");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) m(r, c) = json_number(data[static_cast<std::size_t>(r * cols + c)]);
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_input, std::string("malformed matrix JSON: ") + e.what());
  }
}

inline json basis_json(const BasisSystem& b) {
  json knots = json::array();
  for (double k : b.knots()) knots.push_back(k);
  return json{{"order", b.order()}, {"p", b.size()}, {"penalty_order", b.penalty_order()}, {"knots", knots}};
}

inline BasisSystem basis_from_json(const json& j) {
  try {
    const auto knots = j.at("knots").get<std::vector<double>>();
    BasisSystem b(knots, j.at("order").get<int>(), j.at("penalty_order").get<int>());
    if (j.contains("p") && j.at("p").get<Index>() != b.size()) {
      throw Error(Errc::invalid_input, "basis JSON: p does not match the knot vector");
    }
    return b;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_input, std::string("malformed basis JSON: ") + e.what());
  }
}

inline json expansion_json(const BasisExpansion& e, Precision prec = Precision::exact) {
  return json{{"basis", basis_json(*e.basis)},
              {"centered", e.centered},
              {"mean_coefs", vector_json(e.mean_coefs, prec)},
              {"rss", vector_json(e.rss, prec)},
              {"coefs", matrix_json(e.coefs, prec)}};
}

inline BasisExpansion expansion_from_json(const json& j) {
  try {
    BasisExpansion e;
    e.basis = std::make_shared<const BasisSystem>(basis_from_json(j.at("basis")));
    e.centered = j.at("centered").get<bool>();
    e.mean_coefs = vector_from_json(j.at("mean_coefs"));
    e.rss = vector_from_json(j.at("rss"));
    e.coefs = matrix_from_json(j.at("coefs"));
    if (e.coefs.cols() != e.basis->size() || e.mean_coefs.size() != e.basis->size()) {
      throw Error(Errc::invalid_input, "expansion JSON: coefficient dimensions do not match the basis");
    }
    return e;
  } catch (const json::exception& ex) {
    throw Error(Errc::invalid_input, std::string("malformed expansion JSON: ") + ex.what());
  }
}

inline json fpca_json(const FpcaModel& m, Precision prec = Precision::report) {
  return json{{"lambda", number_json(m.lambda, prec)},
              {"q_max", m.q_max},
              {"shrink", m.shrunk},
              {"shrinkage_intensity", number_json(m.shrinkage_intensity, prec)},
              {"total_variance", number_json(m.total_variance, prec)},
              {"eigenvalues", vector_json(m.eigenvalues, prec)},
              {"weight_coefs", matrix_json(m.weight_coefs, prec)},
              {"beta_coefs", matrix_json(m.beta_coefs, prec)},
              {"scores", matrix_json(m.scores, prec)}};
}

inline json fica_json(const FicaModel& f, Precision prec = Precision::report) {
  return json{{"q", f.q},
              {"rho", vector_json(f.kurtosis_eigenvalues, prec)},
              {"rotation", matrix_json(f.rotation, prec)},
              {"whitener", matrix_json(f.whitener, prec)},
              {"psi_coefs", matrix_json(f.psi_coefs, prec)},
              {"zeta", matrix_json(f.component_scores, prec)},
              {"zeta_white", matrix_json(f.white_components, prec)}};
}

inline json tuning_json(const TuningResult& r, Precision prec = Precision::report) {
  json grid = json::array();
  for (double l : r.lambda_grid) grid.push_back(number_json(l, prec));
  json out{{"lambda_grid", grid},
           {"ell", number_json(r.ell, prec)},
           {"shrink", r.shrink},
           {"q_values", r.q_values},
           {"bcv", matrix_json(r.bcv, prec)},
           {"j0", r.j0},
           {"j0_fallback", r.j0_fallback},
           {"q_star", r.q_star},
           {"lambda_star", number_json(r.lambda_star, prec)},
           {"bcv_star", number_json(r.bcv_star, prec)},
           {"log_bcv_star", number_json(r.log_bcv_star, prec)},
           {"residual_fallback", r.residual_fallback},
           {"var_pct_lambda", number_json(r.var_pct_lambda, prec)},
           {"var_pct_lambda0", number_json(r.var_pct_lambda0, prec)}};
  if (r.cv) out["cv"] = matrix_json(*r.cv, prec);
  return out;
}

inline TuningResult tuning_from_json(const json& j) {
  try {
    TuningResult r;
    for (const auto& l : j.at("lambda_grid")) r.lambda_grid.push_back(json_number(l));
    r.ell = json_number(j.at("ell"));
    r.shrink = j.at("shrink").get<bool>();
    r.q_values = j.at("q_values").get<std::vector<Index>>();
    r.bcv = matrix_from_json(j.at("bcv"));
    if (j.contains("cv")) r.cv = matrix_from_json(j.at("cv"));
    r.j0 = j.at("j0").get<Index>();
    r.j0_fallback = j.at("j0_fallback").get<bool>();
    r.q_star = j.at("q_star").get<Index>();
    r.lambda_star = json_number(j.at("lambda_star"));
    r.bcv_star = json_number(j.at("bcv_star"));
    r.log_bcv_star = json_number(j.at("log_bcv_star"));
    r.residual_fallback = j.at("residual_fallback").get<bool>();
    r.var_pct_lambda = json_number(j.at("var_pct_lambda"));
    r.var_pct_lambda0 = json_number(j.at("var_pct_lambda0"));
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_input, std::string("malformed tuning JSON: ") + e.what());
  }
}

}  // namespace bfica
