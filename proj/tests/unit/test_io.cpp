#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace bfica;

namespace {

BasisExpansion small_expansion(std::uint64_t seed) {
  MixtureSpec spec;
  spec.seed = seed;
  spec.n_channels = 12;
  spec.n_samples = 200;
  const SynthResult s = generate(spec);
  auto basis = std::make_shared<const BasisSystem>(make_basis({0, 1}, 15, 4));
  return fit_coefficients(s.sample, basis);
}

}  // namespace

TEST_CASE("report and exact number formats", "[io][format]") {
  REQUIRE(format_number(1.0 / 3.0) == "0.3333333333");
  REQUIRE(format_number(1e-20) == "1e-20");
  REQUIRE(format_number(std::numeric_limits<double>::infinity()) == "inf");
  REQUIRE(format_number(-std::numeric_limits<double>::infinity()) == "-inf");
  REQUIRE(format_number(std::nan("")) == "nan");
  const double x = 0.1 + 0.2;
  REQUIRE(std::strtod(format_exact(x).c_str(), nullptr) == x);
  REQUIRE(round_report(1.0 / 3.0) == 0.3333333333);
}

TEST_CASE("whole-token number parsing", "[io][format]") {
  double v = 0.0;
  REQUIRE(parse_double(" 2.5 ", v));
  REQUIRE(v == 2.5);
  REQUIRE(parse_double("+1e3", v));
  REQUIRE(v == 1000.0);
  REQUIRE(parse_double("inf", v));
  REQUIRE(std::isinf(v));
  REQUIRE_FALSE(parse_double("1.5x", v));
  REQUIRE_FALSE(parse_double("", v));
  REQUIRE_FALSE(parse_double("Fz", v));
}

TEST_CASE("non-finite numbers are written as strings", "[io][json]") {
  const json j = number_json(std::numeric_limits<double>::infinity(), Precision::exact);
  REQUIRE(j.is_string());
  REQUIRE(j.get<std::string>() == "inf");
  REQUIRE(std::isinf(json_number(j)));
  REQUIRE(std::isnan(json_number(json("nan"))));
  REQUIRE(json_number(json("2.25")) == 2.25);
  REQUIRE_THROWS_AS(json_number(json(true)), Error);
  REQUIRE(number_json(1.0 / 3.0, Precision::report).get<double>() == 0.3333333333);
  REQUIRE(number_json(1.0 / 3.0, Precision::exact).get<double>() == 1.0 / 3.0);
}

TEST_CASE("matrices round-trip exactly", "[io][json]") {
  Matrix m = oracle::gaussian_matrix(3, 4, 1);
  m(1, 2) = -std::numeric_limits<double>::infinity();
  const json j = json::parse(matrix_json(m, Precision::exact).dump());
  REQUIRE(j.at("rows") == 3);
  REQUIRE(j.at("cols") == 4);
  REQUIRE(j.at("data")[0].get<double>() == m(0, 0));
  REQUIRE(j.at("data")[4].get<double>() == m(1, 0));
  REQUIRE(matrix_from_json(j) == m);
  json bad = j;
  bad["rows"] = 2;
  REQUIRE_THROWS_AS(matrix_from_json(bad), Error);
  REQUIRE_THROWS_AS(matrix_from_json(json::object()), Error);
}

TEST_CASE("basis expansions round-trip exactly", "[io][json]") {
  const BasisExpansion e = small_expansion(2);
  const BasisExpansion back = expansion_from_json(json::parse(expansion_json(e).dump()));
  REQUIRE(back.coefs == e.coefs);
  REQUIRE(back.mean_coefs == e.mean_coefs);
  REQUIRE(back.rss == e.rss);
  REQUIRE(back.centered == e.centered);
  REQUIRE(back.basis->knots() == e.basis->knots());
  REQUIRE(back.basis->order() == 4);
  REQUIRE(back.basis->gram() == e.basis->gram());
  json bad = expansion_json(e);
  bad["basis"]["p"] = 99;
  REQUIRE_THROWS_AS(expansion_from_json(bad), Error);
}

TEST_CASE("tuning results round-trip exactly", "[io][json]") {
  const BasisExpansion e = small_expansion(3);
  const std::vector<double> grid{0.0, 0.3, 10.0};
  const TuningResult r = tune(e, grid, TuneOptions{0.1, ShrinkMode::off, std::nullopt, true});
  const TuningResult back = tuning_from_json(json::parse(tuning_json(r, Precision::exact).dump()));
  REQUIRE(back.lambda_grid == r.lambda_grid);
  REQUIRE(back.bcv == r.bcv);
  REQUIRE(back.cv);
  REQUIRE(*back.cv == *r.cv);
  REQUIRE(back.q_values == r.q_values);
  REQUIRE(back.j0 == r.j0);
  REQUIRE(back.q_star == r.q_star);
  REQUIRE(back.lambda_star == r.lambda_star);
  REQUIRE(back.log_bcv_star == r.log_bcv_star);
  REQUIRE(back.var_pct_lambda == r.var_pct_lambda);
  REQUIRE(back.var_pct_lambda0 == r.var_pct_lambda0);
}

TEST_CASE("selection parsing", "[io][selection]") {
  REQUIRE(parse_selection("all").mode == SelectionSpec::Mode::all);
  REQUIRE(parse_selection("none").mode == SelectionSpec::Mode::none);
  REQUIRE(parse_selection("").mode == SelectionSpec::Mode::none);
  const SelectionSpec idx = parse_selection(" 3, 1 ");
  REQUIRE(idx.mode == SelectionSpec::Mode::indices);
  REQUIRE(idx.indices == std::vector<Index>{3, 1});
  REQUIRE(idx.to_string() == "3,1");
  const SelectionSpec k = parse_selection("kurtosis:1.5");
  REQUIRE(k.mode == SelectionSpec::Mode::kurtosis);
  REQUIRE(k.threshold == 1.5);
  for (const char* bad : {"1,,2", "a", "kurtosis:-1", "kurtosis:x", "1.5"}) {
    try {
      parse_selection(bad);
      FAIL("expected an error for " << bad);
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::invalid_selection);
    }
  }
}

TEST_CASE("selections resolve to sorted 0-based indices", "[io][selection]") {
  FicaModel f;
  f.q = 4;
  f.kurtosis_eigenvalues.resize(4);
  f.kurtosis_eigenvalues << 9.0, 6.4, 5.9, 3.0;
  REQUIRE(resolve_selection(parse_selection("all"), f) == std::vector<Index>{0, 1, 2, 3});
  REQUIRE(resolve_selection(parse_selection("none"), f).empty());
  REQUIRE(resolve_selection(parse_selection("4,2"), f) == std::vector<Index>{1, 3});
  REQUIRE(resolve_selection(parse_selection("kurtosis:1"), f) == std::vector<Index>{0, 3});
  REQUIRE_THROWS_AS(resolve_selection(parse_selection("5"), f), Error);
  REQUIRE_THROWS_AS(resolve_selection(parse_selection("0"), f), Error);
  REQUIRE_THROWS_AS(resolve_selection(parse_selection("2,2"), f), Error);
}

TEST_CASE("synthetic CSV carries its sources as comments", "[io][synth]") {
  MixtureSpec spec;
  spec.seed = 4;
  spec.n_channels = 5;
  spec.n_samples = 100;
  spec.n_sources = 3;
  spec.artifact_count = 1;
  const SynthResult r = generate(spec);
  std::ostringstream out;
  write_synth_csv(out, spec, r);
  std::istringstream in(out.str());
  const CsvTable table = parse_curve_csv(in);
  REQUIRE(table.rows.size() == 5);
  REQUIRE(table.labels.front() == "ch1");
  REQUIRE(table.comments.front().rfind("synth,seed=4,", 0) == 0);
  const auto truth = embedded_truth(table.comments);
  REQUIRE(truth);
  REQUIRE(truth->sources.rows() == 3);
  REQUIRE(truth->is_artifact == std::vector<bool>{false, false, true});
  REQUIRE(oracle::max_abs(truth->sources - r.truth.sources) < 1e-9 * oracle::max_abs(r.truth.sources));
  REQUIRE_FALSE(embedded_truth({"a comment"}));
  REQUIRE_THROWS_AS(embedded_truth({"source,1,brain"}), Error);
}

TEST_CASE("summary and surface CSV layouts", "[io][csv]") {
  Summary s;
  s.j0 = 3;
  s.q = 2;
  s.lambda = 0.3;
  s.log_bcv = -1.25;
  s.var_pct_lambda = 80.5;
  s.var_pct_lambda0 = 90.0;
  std::ostringstream out;
  write_summary_csv(out, s);
  REQUIRE(out.str() == "j0,q,lambda,log_bcv,var_pct_lambda,var_pct_lambda0\n3,2,0.3,-1.25,80.5,90\n");

  TuningResult r;
  r.lambda_grid = {0.0, 1.0};
  r.q_values = {1, 2};
  r.bcv.resize(2, 2);
  r.bcv << 1, 2, 3, 4;
  std::ostringstream surf;
  write_surface_csv(surf, r);
  REQUIRE(surf.str() == "q,lambda,bcv\n1,0,1\n1,1,2\n2,0,3\n2,1,4\n");
}

TEST_CASE("FNV-1a fingerprints", "[io][hash]") {
  REQUIRE(fnv1a_hex("") == "cbf29ce484222325");
  REQUIRE(fnv1a_hex("a") == "af63dc4c8601ec8c");
  REQUIRE(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("model hashes are stable and sensitive", "[io][hash]") {
  const BasisExpansion e = small_expansion(5);
  const Decomposition a = decompose(e, 1.0, 3);
  const Decomposition b = decompose(e, 1.0, 3);
  const Decomposition c = decompose(e, 2.0, 3);
  REQUIRE(model_hash(a) == model_hash(b));
  REQUIRE(model_hash(a) != model_hash(c));
  REQUIRE(model_hash(a).size() == 16);
}

TEST_CASE("stage errors keep their code and name the stage", "[io][errors]") {
  try {
    run_stage("tune", [] { throw Error(Errc::invalid_configuration, "bad grid"); });
    FAIL("expected an error");
  } catch (const StageError& e) {
    REQUIRE(e.stage() == "tune");
    REQUIRE(e.code() == Errc::invalid_configuration);
    REQUIRE(e.kind() == ErrorKind::config);
    REQUIRE(std::string(e.what()) == "bad grid");
  }
  REQUIRE(run_stage("fit", [] { return 7; }) == 7);
  REQUIRE(kind_of(Errc::whitening_singular) == ErrorKind::numeric);
  REQUIRE(kind_of(Errc::io) == ErrorKind::io);
  REQUIRE(std::string(to_string(Errc::out_of_domain)) == "out_of_domain");
}

TEST_CASE("decompose rejects q beyond the retained components", "[io][pipeline]") {
  const BasisExpansion e = small_expansion(6);
  try {
    decompose(e, 0.0, 12, ShrinkMode::off);
    FAIL("expected an error");
  } catch (const Error& err) {
    REQUIRE(err.kind() == ErrorKind::config);
  }
}
