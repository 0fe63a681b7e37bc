#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bfica/bfica.hpp"

namespace fs = std::filesystem;
using namespace bfica;

namespace {

struct Workdir {
  fs::path dir;

  fs::path operator/(const std::string& name) const { return dir / name; }

  void ensure() const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::io, "cannot create '" + dir.string() + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) const {
    ensure();
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << content) || !out.flush()) throw Error(Errc::io, "cannot write '" + path.string() + "'");
  }

  bool exists(const std::string& name) const { return fs::exists(dir / name); }

  json read_json(const std::string& name) const {
    const fs::path path = dir / name;
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot read '" + path.string() + "'; run the earlier stage first");
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(Errc::io, "corrupt '" + path.string() + "': " + e.what());
    }
  }

  void remove(const std::string& name) const {
    std::error_code ec;
    fs::remove(dir / name, ec);
  }
};

// ---------------------------------------------------------------------------
// Session state on disk

struct Session {
  FitConfig config;
  SignalSample sample;
  BasisExpansion expansion;
  std::vector<std::string> comments;
};

json rows_json(const std::vector<Vector>& rows) {
  json a = json::array();
  for (const auto& r : rows) a.push_back(vector_json(r, Precision::exact));
  return a;
}

std::vector<Vector> rows_from_json(const json& j) {
  std::vector<Vector> rows;
  for (const auto& r : j) rows.push_back(vector_from_json(r));
  return rows;
}

json session_json(const Session& s) {
  return json{{"config",
               {{"p", s.config.p},
                {"order", s.config.order},
                {"penalty_order", s.config.penalty_order},
                {"center", s.config.center}}},
              {"labels", s.sample.labels},
              {"times", rows_json(s.sample.times)},
              {"values", rows_json(s.sample.values)},
              {"comments", s.comments},
              {"expansion", expansion_json(s.expansion, Precision::exact)}};
}

Session session_from_json(const json& j) {
  try {
    Session s;
    const json& c = j.at("config");
    s.config.p = c.at("p").get<Index>();
    s.config.order = c.at("order").get<int>();
    s.config.penalty_order = c.at("penalty_order").get<int>();
    s.config.center = c.at("center").get<bool>();
    s.sample.labels = j.at("labels").get<std::vector<std::string>>();
    s.sample.times = rows_from_json(j.at("times"));
    s.sample.values = rows_from_json(j.at("values"));
    s.sample.validate();
    s.comments = j.at("comments").get<std::vector<std::string>>();
    s.expansion = expansion_from_json(j.at("expansion"));
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::io, std::string("malformed session.json: ") + e.what());
  }
}

Session load_session(const Workdir& wd) {
  return run_stage("load", [&] { return session_from_json(wd.read_json("session.json")); });
}

std::optional<TuningResult> load_tuning(const Workdir& wd) {
  if (!wd.exists("tuning.json")) return std::nullopt;
  return run_stage("load", [&] { return tuning_from_json(wd.read_json("tuning.json")); });
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Stage options

struct FitArgs {
  std::string input = "-";
  std::optional<std::string> times;
  FitConfig config;
  bool no_center = false;
};

struct TuneArgs {
  std::string grid;
  double ell = 0.1;
  std::optional<Index> q;
  std::string shrink = "auto";
  bool cv = false;
};

struct DecomposeArgs {
  std::optional<double> lambda;
  std::optional<Index> q;
  std::string shrink = "auto";
};

ShrinkMode parse_shrink(const std::string& s) {
  if (s == "on") return ShrinkMode::on;
  if (s == "off") return ShrinkMode::off;
  return ShrinkMode::automatic;
}

std::vector<double> parse_grid(const std::string& text) {
  if (text.empty()) return default_lambda_grid();
  std::vector<double> grid;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    double v = 0.0;
    if (!parse_double(tok, v)) throw Error(Errc::invalid_configuration, "cannot parse grid value '" + tok + "'");
    grid.push_back(v);
  }
  return grid;
}

void add_fit_options(CLI::App* cmd, FitArgs& a, bool input_required) {
  auto* in = cmd->add_option("--input,-i", a.input, "Curve CSV (one curve per row, '-' for stdin)");
  if (input_required) in->required();
  cmd->add_option("--times", a.times, "Sampling points CSV (one shared row or one row per curve)");
  cmd->add_option("--p", a.config.p, "Number of B-spline basis functions")->capture_default_str();
  cmd->add_option("--order", a.config.order, "B-spline order (4 = cubic)")->capture_default_str();
  cmd->add_option("--penalty-order", a.config.penalty_order, "Difference penalty order")->capture_default_str();
  cmd->add_flag("--no-center", a.no_center, "Do not remove the mean curve");
}

void add_tune_options(CLI::App* cmd, TuneArgs& a) {
  cmd->add_option("--grid", a.grid, "Comma-separated lambda grid (default {0} and 10^-2..10^8)");
  cmd->add_option("--ell", a.ell, "BCV baseline offset")->capture_default_str();
  cmd->add_option("--tune-q", a.q, "Tune lambda for this q only");
  cmd->add_option("--shrink", a.shrink, "Shrinkage covariance")
      ->check(CLI::IsMember({"auto", "on", "off"}))
      ->capture_default_str();
  cmd->add_flag("--cv", a.cv, "Also compute classical leave-one-out CV");
}

void add_decompose_options(CLI::App* cmd, DecomposeArgs& a, bool with_shrink) {
  cmd->add_option("--lambda", a.lambda, "Smoothing parameter (default: tuned)");
  cmd->add_option("--q", a.q, "Number of components (default: tuned)");
  if (with_shrink) {
    cmd->add_option("--shrink", a.shrink, "Shrinkage covariance")
        ->check(CLI::IsMember({"auto", "on", "off"}))
        ->capture_default_str();
  }
}

// ---------------------------------------------------------------------------
// Stages

Session run_fit(const Workdir& wd, const FitArgs& a) {
  Session s;
  s.config = a.config;
  s.config.center = !a.no_center;
  CsvTable values = run_stage("input", [&] { return read_csv_file(a.input); });
  s.comments = values.comments;
  s.sample = run_stage("input", [&] {
    std::optional<CsvTable> times;
    if (a.times) times = read_csv_file(*a.times);
    return make_sample(values, times);
  });
  s.expansion = run_stage("fit", [&] { return fit_stage(s.sample, s.config); });
  run_stage("output", [&] {
    for (const char* stale : {"tuning.json", "bcv_surface.csv", "model.json", "components.csv", "summary.csv",
                              "summary.json", "cleaned.csv", "report.json"}) {
      wd.remove(stale);
    }
    wd.write("session.json", dump(session_json(s)));
  });
  return s;
}

TuningResult run_tune(const Workdir& wd, const Session& s, const TuneArgs& a) {
  TuneOptions opt;
  opt.ell = a.ell;
  opt.shrink = parse_shrink(a.shrink);
  opt.q = a.q;
  opt.with_cv = a.cv;
  const std::vector<double> grid = run_stage("tune", [&] { return parse_grid(a.grid); });
  TuningResult r = run_stage("tune", [&] { return tune(s.expansion, grid, opt); });
  run_stage("output", [&] {
    wd.write("tuning.json", dump(tuning_json(r, Precision::exact)));
    std::ostringstream surface;
    write_surface_csv(surface, r);
    wd.write("bcv_surface.csv", surface.str());
  });
  return r;
}

Decomposition run_decompose(const Workdir& wd, const Session& s, const std::optional<TuningResult>& tuning,
                            const DecomposeArgs& a, double ell) {
  if ((!a.lambda || !a.q) && !tuning) {
    throw StageError("decompose", Error(Errc::invalid_configuration,
                                        "--lambda and --q are required when no tuning result exists"));
  }
  const double lambda = a.lambda ? *a.lambda : tuning->lambda_star;
  const Index q = a.q ? *a.q : tuning->q_star;
  const ShrinkMode mode = parse_shrink(a.shrink);
  Decomposition d = run_stage("decompose", [&] { return decompose(s.expansion, lambda, q, mode); });
  const Summary sum = run_stage("summary", [&] { return summarize(s.expansion, d, tuning, ell); });
  run_stage("output", [&] {
    json model = decomposition_json(d);
    model["model_hash"] = model_hash(d);
    json order = json::array();
    for (Index l : d.fica.by_gaussian_distance()) order.push_back(l + 1);
    model["order_by_gaussian_distance"] = order;
    wd.write("model.json", dump(model));
    std::ostringstream comps;
    write_components_csv(comps, d.fica, s.sample);
    wd.write("components.csv", comps.str());
    std::ostringstream csv;
    write_summary_csv(csv, sum);
    wd.write("summary.csv", csv.str());
    wd.write("summary.json", dump(summary_json(sum)));
  });
  return d;
}

/// Decomposition parameters recorded in model.json, if present.
DecomposeArgs recorded_decomposition(const Workdir& wd, DecomposeArgs a) {
  if (a.lambda && a.q) return a;
  if (!wd.exists("model.json")) return a;
  const json m = run_stage("load", [&] { return wd.read_json("model.json"); });
  try {
    if (!a.lambda) a.lambda = json_number(m.at("lambda"));
    if (!a.q) a.q = m.at("q").get<Index>();
    a.shrink = m.at("shrink").get<bool>() ? "on" : "off";
  } catch (const json::exception& e) {
    throw StageError("load", Error(Errc::io, std::string("malformed model.json: ") + e.what()));
  }
  return a;
}

void run_clean(const Workdir& wd, const Session& s, const Decomposition& d, const std::string& select) {
  const SelectionSpec spec = run_stage("clean", [&] { return parse_selection(select); });
  const std::vector<Index> selection = run_stage("clean", [&] { return resolve_selection(spec, d.fica); });
  const CleanedSignal cleaned = run_stage("clean", [&] { return clean_stage(s.expansion, d, selection); });
  const std::string csv = run_stage("clean", [&] { return cleaned_csv(cleaned, s.expansion, s.sample); });
  json removed = json::array();
  for (Index l : selection) removed.push_back(l + 1);
  json report{{"selection", spec.to_string()},
              {"removed", removed},
              {"lambda", number_json(d.lambda, Precision::report)},
              {"q", d.q},
              {"model_hash", model_hash(d)}};
  if (const auto truth = run_stage("report", [&] { return embedded_truth(s.comments); })) {
    report["truth"] = run_stage("report", [&] { return truth_report(*truth, d, s.expansion, s.sample); });
    report["mean_abs_corr"] = report["truth"]["mean_abs_corr"];
  }
  run_stage("output", [&] {
    wd.write("cleaned.csv", csv);
    wd.write("report.json", dump(report));
  });
}

double recorded_ell(const std::optional<TuningResult>& tuning) { return tuning ? tuning->ell : 0.1; }

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::config: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::io: return 4;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-smoothed functional independent component analysis"};
  app.require_subcommand(1);
  std::string workdir = "fica_out";
  app.add_option("--workdir,-w", workdir, "Directory holding the session state and outputs")->capture_default_str();

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit B-spline coefficients to the input curves");
  add_fit_options(fit_cmd, fit_args, true);

  TuneArgs tune_args;
  auto* tune_cmd = app.add_subcommand("tune", "Select lambda and q by baseline cross-validation");
  add_tune_options(tune_cmd, tune_args);

  DecomposeArgs dec_args;
  auto* dec_cmd = app.add_subcommand("decompose", "Penalized FPCA followed by functional ICA");
  add_decompose_options(dec_cmd, dec_args, true);

  DecomposeArgs clean_dec_args;
  std::string clean_select = "all";
  auto* clean_cmd = app.add_subcommand("clean", "Subtract the selected components");
  add_decompose_options(clean_cmd, clean_dec_args, true);
  clean_cmd->add_option("--select", clean_select, "all | none | 1,2,... | kurtosis:T")->capture_default_str();

  FitArgs pipe_fit;
  TuneArgs pipe_tune;
  DecomposeArgs pipe_dec;
  std::string pipe_select = "all";
  auto* pipe_cmd = app.add_subcommand("pipeline", "fit, tune, decompose and clean in one run");
  add_fit_options(pipe_cmd, pipe_fit, false);
  add_tune_options(pipe_cmd, pipe_tune);
  add_decompose_options(pipe_cmd, pipe_dec, false);
  pipe_cmd->add_option("--select", pipe_select, "all | none | 1,2,... | kurtosis:T")->capture_default_str();

  MixtureSpec synth_spec;
  std::string synth_kind = "blink_like";
  std::optional<std::string> synth_output;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic mixture with embedded ground truth");
  synth_cmd->add_option("--seed", synth_spec.seed)->capture_default_str();
  synth_cmd->add_option("--channels", synth_spec.n_channels)->capture_default_str();
  synth_cmd->add_option("--samples", synth_spec.n_samples)->capture_default_str();
  synth_cmd->add_option("--sources", synth_spec.n_sources)->capture_default_str();
  synth_cmd->add_option("--artifacts", synth_spec.artifact_count)->capture_default_str();
  synth_cmd->add_option("--kind", synth_kind, "low_freq_burst | blink_like | step_drift")->capture_default_str();
  synth_cmd->add_option("--snr-db", synth_spec.snr_db, "Signal-to-noise ratio (inf: noiseless)")->capture_default_str();
  synth_cmd->add_option("--artifact-gain", synth_spec.artifact_gain)->capture_default_str();
  synth_cmd->add_option("--output,-o", synth_output, "Output file (default stdout)");

  ServiceOptions serve_opt;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string persist_dir;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--cors-origin", serve_opt.cors_origin)->capture_default_str();
  serve_cmd->add_option("--persist-dir", persist_dir, "Directory for POST /sessions/{id}/persist");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const Workdir wd{workdir};
  try {
    if (*fit_cmd) {
      const Session s = run_fit(wd, fit_args);
      std::cout << "fitted " << s.expansion.n() << " curves with p=" << s.expansion.p() << '\n';
    } else if (*tune_cmd) {
      const Session s = load_session(wd);
      const TuningResult r = run_tune(wd, s, tune_args);
      std::cout << "q=" << r.q_star << " lambda=" << format_number(r.lambda_star)
                << " log_bcv=" << format_number(r.log_bcv_star) << '\n';
    } else if (*dec_cmd) {
      const Session s = load_session(wd);
      const auto tuning = load_tuning(wd);
      const Decomposition d = run_decompose(wd, s, tuning, dec_args, recorded_ell(tuning));
      std::cout << "q=" << d.q << " lambda=" << format_number(d.lambda) << " model=" << model_hash(d) << '\n';
    } else if (*clean_cmd) {
      const Session s = load_session(wd);
      const auto tuning = load_tuning(wd);
      const bool explicit_shrink = clean_cmd->count("--shrink") > 0;
      DecomposeArgs a = recorded_decomposition(wd, clean_dec_args);
      if (explicit_shrink) a.shrink = clean_dec_args.shrink;
      const Decomposition d = run_decompose(wd, s, tuning, a, recorded_ell(tuning));
      run_clean(wd, s, d, clean_select);
      std::cout << "cleaned " << s.expansion.n() << " curves (select " << clean_select << ")\n";
    } else if (*pipe_cmd) {
      const Session s = run_fit(wd, pipe_fit);
      std::optional<TuningResult> tuning;
      if (pipe_dec.q && !pipe_tune.q) pipe_tune.q = pipe_dec.q;
      if (!pipe_dec.lambda || !pipe_dec.q) tuning = run_tune(wd, s, pipe_tune);
      pipe_dec.shrink = pipe_tune.shrink;
      const Decomposition d = run_decompose(wd, s, tuning, pipe_dec, pipe_tune.ell);
      run_clean(wd, s, d, pipe_select);
      std::cout << "q=" << d.q << " lambda=" << format_number(d.lambda) << " model=" << model_hash(d) << '\n';
    } else if (*synth_cmd) {
      synth_spec.artifact_kind = run_stage("synth", [&] { return parse_artifact_kind(synth_kind); });
      const SynthResult r = run_stage("synth", [&] { return generate(synth_spec); });
      std::ostringstream out;
      write_synth_csv(out, synth_spec, r);
      if (synth_output) {
        run_stage("output", [&] {
          std::ofstream f(*synth_output, std::ios::binary);
          if (!f || !(f << out.str()) || !f.flush()) throw Error(Errc::io, "cannot write '" + *synth_output + "'");
        });
      } else {
        std::cout << out.str();
      }
    } else if (*serve_cmd) {
      if (!persist_dir.empty()) serve_opt.persist_dir = persist_dir;
      Service service(serve_opt);
      std::cerr << "listening on http://" << host << ':' << port << '\n';
      if (!service.listen(host, port)) {
        throw StageError("serve", Error(Errc::io, "cannot bind " + host + ":" + std::to_string(port)));
      }
    }
  } catch (const StageError& e) {
    std::cerr << "error[stage=" << e.stage() << " code=" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code(e);
  } catch (const Error& e) {
    std::cerr << "error[stage=none code=" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
