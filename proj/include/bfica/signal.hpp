#pragma once

#include <algorithm>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bfica/error.hpp"
#include "bfica/format.hpp"
#include "bfica/linalg.hpp"

namespace bfica {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double length() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// Raw discrete multichannel signal: n curves, each with its own sampling
/// grid t_i1 < ... < t_im_i.
struct SignalSample {
  std::vector<Vector> values;
  std::vector<Vector> times;
  std::vector<std::string> labels;  // empty or one per curve

  std::size_t size() const { return values.size(); }

  std::string curve_name(std::size_t i) const {
    if (i < labels.size() && !labels[i].empty()) return labels[i];
    return "curve " + std::to_string(i + 1);
  }

  Interval domain() const {
    Interval d{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& t : times) {
      if (t.size() == 0) continue;
      d.lo = std::min(d.lo, t(0));
      d.hi = std::max(d.hi, t(t.size() - 1));
    }
    return d;
  }

  bool shared_grid() const {
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (times[i].size() != times[0].size() || times[i] != times[0]) return false;
    }
    return true;
  }

  /// Checks shape, finiteness and strict monotonicity of each grid.
  void validate() const {
    if (values.empty()) throw Error(Errc::invalid_input, "signal has no curves");
    if (times.size() != values.size()) {
      throw Error(Errc::invalid_input, "times and values disagree on the number of curves");
    }
    if (!labels.empty() && labels.size() != values.size()) {
      throw Error(Errc::invalid_input, "label count does not match curve count");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].size() != times[i].size()) {
        throw Error(Errc::invalid_input, curve_name(i) + ": " + std::to_string(values[i].size()) +
                                             " samples but " + std::to_string(times[i].size()) +
                                             " sampling points");
      }
      if (values[i].size() == 0) throw Error(Errc::invalid_input, curve_name(i) + ": empty curve");
      if (!values[i].allFinite() || !times[i].allFinite()) {
        throw Error(Errc::invalid_input, curve_name(i) + ": non-finite sample");
      }
      for (Index k = 1; k < times[i].size(); ++k) {
        if (!(times[i](k) > times[i](k - 1))) {
          throw Error(Errc::invalid_input, curve_name(i) + ": sampling points must strictly increase");
        }
      }
    }
  }
};

/// Uniform grid of m points on [lo, hi].
inline Vector uniform_grid(Index m, Interval d = {}) {
  Vector t(m);
  if (m == 1) {
    t(0) = d.lo;
    return t;
  }
  for (Index k = 0; k < m; ++k) {
    t(k) = d.lo + d.length() * static_cast<double>(k) / static_cast<double>(m - 1);
  }
  t(m - 1) = d.hi;
  return t;
}

/// Rows of a curve CSV. A non-numeric first field is taken as the row label;
/// lines starting with '#' are kept aside as comments.
struct CsvTable {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> comments;

  bool has_labels() const {
    return std::any_of(labels.begin(), labels.end(), [](const auto& s) { return !s.empty(); });
  }
};

inline CsvTable parse_curve_csv(std::istream& in, const std::string& source = "input") {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      table.comments.emplace_back(view.substr(1));
      continue;
    }
    std::vector<double> row;
    std::string label;
    std::size_t start = 0;
    bool first = true;
    while (true) {
      const std::size_t comma = view.find(',', start);
      const std::string_view token =
          view.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      double v = 0.0;
      if (parse_double(token, v)) {
        row.push_back(v);
      } else if (first) {
        label = std::string(trim(token));
      } else {
        throw Error(Errc::invalid_input, source + ":" + std::to_string(line_no) +
                                             ": cannot parse '" + std::string(trim(token)) + "'");
      }
      first = false;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    table.labels.push_back(std::move(label));
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

/// Builds a sample from value rows and optional time rows (one per curve or a
/// single shared row). Without times each curve gets a uniform grid on [0,1].
inline SignalSample make_sample(const CsvTable& values, const std::optional<CsvTable>& times = {}) {
  SignalSample s;
  if (values.rows.empty()) throw Error(Errc::invalid_input, "signal CSV has no rows");
  for (const auto& r : values.rows) s.values.push_back(to_vector(r));
  if (values.has_labels()) s.labels = values.labels;
  if (times) {
    if (times->rows.size() == 1) {
      s.times.assign(s.values.size(), to_vector(times->rows[0]));
    } else if (times->rows.size() == values.rows.size()) {
      for (const auto& r : times->rows) s.times.push_back(to_vector(r));
    } else {
      throw Error(Errc::invalid_input, "times CSV must have one row or one row per curve");
    }
  } else {
    for (const auto& v : s.values) s.times.push_back(uniform_grid(v.size()));
  }
  s.validate();
  return s;
}

/// Writes one curve per row in the input CSV format.
inline void write_curve_csv(std::ostream& out, const std::vector<Vector>& rows,
                            const std::vector<std::string>& labels = {}) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!labels.empty()) out << labels[i] << ',';
    for (Index k = 0; k < rows[i].size(); ++k) {
      if (k) out << ',';
      out << format_number(rows[i](k));
    }
    out << '\n';
  }
}

}  // namespace bfica
