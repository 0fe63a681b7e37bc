#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>

#include "bfica/io_json.hpp"
#include "bfica/pipeline.hpp"

namespace bfica {

struct ServiceOptions {
  std::string cors_origin = "*";
  std::optional<std::string> persist_dir;
  Index max_points = 2000;  // decimation limit for curve payloads
};

/// Immutable state of one analysis session. Mutations build a new snapshot.
struct SessionSnapshot {
  std::string id;
  std::uint64_t revision = 0;
  FitConfig config;
  SignalSample sample;
  BasisExpansion expansion;
  double ell = 0.1;
  std::optional<TuningResult> tuning;
  std::optional<Decomposition> decomposition;
  std::vector<Index> selection;  // 0-based
};

using SnapshotPtr = std::shared_ptr<const SessionSnapshot>;

/// HTTP failure with status code and optional stage tag.
class HttpError : public std::runtime_error {
 public:
  HttpError(int status, std::string code, const std::string& message, std::string stage = {})
      : std::runtime_error(message), status_(status), code_(std::move(code)), stage_(std::move(stage)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const std::string& stage() const { return stage_; }

 private:
  int status_;
  std::string code_;
  std::string stage_;
};

class SessionStore {
 public:
  SnapshotPtr create(SessionSnapshot s) {
    std::lock_guard lock(mutex_);
    s.id = "s" + std::to_string(++counter_);
    s.revision = 1;
    auto ptr = std::make_shared<const SessionSnapshot>(std::move(s));
    sessions_[ptr->id] = ptr;
    return ptr;
  }

  SnapshotPtr get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw HttpError(404, "not_found", "unknown session '" + id + "'");
    return it->second;
  }

  /// Applies `fn` to the current snapshot and commits the result unless the
  /// revision moved in between (or differs from `expected`).
  template <class Fn>
  SnapshotPtr update(const std::string& id, std::optional<std::uint64_t> expected, Fn&& fn) {
    const SnapshotPtr base = get(id);
    if (expected && *expected != base->revision) {
      throw HttpError(409, "stale_revision", "revision " + std::to_string(*expected) + " is stale; current is " +
                                                 std::to_string(base->revision));
    }
    SessionSnapshot next = fn(*base);
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw HttpError(404, "not_found", "unknown session '" + id + "'");
    if (it->second->revision != base->revision) {
      throw HttpError(409, "stale_revision", "session was modified concurrently; current revision is " +
                                                 std::to_string(it->second->revision));
    }
    next.id = id;
    next.revision = base->revision + 1;
    auto ptr = std::make_shared<const SessionSnapshot>(std::move(next));
    it->second = ptr;
    return ptr;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, SnapshotPtr> sessions_;
  std::uint64_t counter_ = 0;
};

namespace service_detail {

inline int status_for(const Error& e) { return e.kind() == ErrorKind::numeric ? 500 : (e.kind() == ErrorKind::io ? 500 : 422); }

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw HttpError(422, "invalid_input", "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw HttpError(422, "invalid_input", std::string("malformed JSON: ") + e.what());
  }
}

inline std::optional<std::uint64_t> expected_revision(const httplib::Request& req, const json& body) {
  if (body.contains("revision") && !body["revision"].is_null()) {
    if (!body["revision"].is_number_unsigned()) throw HttpError(422, "invalid_input", "revision must be an integer");
    return body["revision"].get<std::uint64_t>();
  }
  if (req.has_header("If-Match")) {
    std::string v = req.get_header_value("If-Match");
    v.erase(std::remove(v.begin(), v.end(), '"'), v.end());
    std::uint64_t r = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), r);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      throw HttpError(422, "invalid_input", "If-Match must carry a revision number");
    }
    return r;
  }
  return std::nullopt;
}

inline std::vector<Index> decimation(Index m, Index limit, bool full) {
  std::vector<Index> idx;
  const Index stride = (full || m <= limit) ? 1 : (m + limit - 1) / limit;
  for (Index k = 0; k < m; k += stride) idx.push_back(k);
  return idx;
}

inline json sampled(const Vector& v, const std::vector<Index>& idx) {
  json a = json::array();
  for (Index k : idx) a.push_back(number_json(v(k), Precision::report));
  return a;
}

template <class T>
T number_param(const json& body, const char* key, T fallback) {
  if (!body.contains(key) || body[key].is_null()) return fallback;
  try {
    if constexpr (std::is_same_v<T, double>) {
      return json_number(body[key]);
    } else {
      return body[key].get<T>();
    }
  } catch (const std::exception&) {
    throw HttpError(422, "invalid_input", std::string("invalid value for '") + key + "'");
  }
}

inline ShrinkMode shrink_param(const json& body) {
  if (!body.contains("shrink") || body["shrink"].is_null()) return ShrinkMode::automatic;
  const json& s = body["shrink"];
  if (s.is_boolean()) return s.get<bool>() ? ShrinkMode::on : ShrinkMode::off;
  if (s == "auto") return ShrinkMode::automatic;
  if (s == "on") return ShrinkMode::on;
  if (s == "off") return ShrinkMode::off;
  throw HttpError(422, "invalid_input", "shrink must be auto, on, off or a boolean");
}

}  // namespace service_detail

/// HTTP/JSON facade over the pipeline stages.
class Service {
 public:
  explicit Service(ServiceOptions opt = {}) : opt_(std::move(opt)) { routes(); }

  httplib::Server& server() { return server_; }
  SessionStore& store() { return store_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  template <class Fn>
  auto wrap(Fn fn) {
    return [this, fn](const Req& req, Res& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        fail(res, e.status(), e.code(), e.what(), e.stage());
      } catch (const StageError& e) {
        fail(res, service_detail::status_for(e), to_string(e.code()), e.what(), e.stage());
      } catch (const Error& e) {
        fail(res, service_detail::status_for(e), to_string(e.code()), e.what(), "");
      } catch (const std::exception& e) {
        fail(res, 500, "internal", e.what(), "");
      }
    };
  }

  static void fail(Res& res, int status, const std::string& code, const std::string& message,
                   const std::string& stage) {
    json err{{"code", code}, {"message", message}};
    if (!stage.empty()) err["stage"] = stage;
    res.status = status;
    res.set_content(json{{"error", err}}.dump(), "application/json");
  }

  static void reply(Res& res, const SessionSnapshot& s, json body, int status = 200) {
    body["id"] = s.id;
    body["revision"] = s.revision;
    res.status = status;
    res.set_header("ETag", "\"" + std::to_string(s.revision) + "\"");
    res.set_header("X-Revision", std::to_string(s.revision));
    res.set_content(body.dump(), "application/json");
  }

  static json session_info(const SessionSnapshot& s) {
    json info{{"n", s.expansion.n()},
              {"p", s.expansion.p()},
              {"order", s.config.order},
              {"penalty_order", s.config.penalty_order},
              {"centered", s.expansion.centered},
              {"domain", json::array({s.expansion.basis->domain().lo, s.expansion.basis->domain().hi})},
              {"tuned", s.tuning.has_value()},
              {"decomposed", s.decomposition.has_value()}};
    json labels = json::array();
    for (std::size_t i = 0; i < s.sample.size(); ++i) labels.push_back(s.sample.curve_name(i));
    info["channels"] = labels;
    if (s.decomposition) {
      info["lambda"] = number_json(s.decomposition->lambda, Precision::report);
      info["q"] = s.decomposition->q;
      info["model_hash"] = model_hash(*s.decomposition);
    }
    json sel = json::array();
    for (Index l : s.selection) sel.push_back(l + 1);
    info["selection"] = sel;
    return info;
  }

  static const Decomposition& require_decomposition(const SessionSnapshot& s) {
    if (!s.decomposition) throw HttpError(409, "not_decomposed", "run POST /sessions/{id}/decompose first");
    return *s.decomposition;
  }

  SignalSample sample_from_request(const Req& req, const json& body) {
    const std::string type = req.get_header_value("Content-Type");
    if (type.rfind("text/csv", 0) == 0) {
      std::istringstream in(req.body);
      return make_sample(parse_curve_csv(in, "request"));
    }
    if (!body.contains("values") || !body["values"].is_array()) {
      throw HttpError(422, "invalid_input", "body needs a 'values' array of curves (or a text/csv upload)");
    }
    CsvTable values;
    try {
      for (const auto& row : body["values"]) {
        std::vector<double> r;
        for (const auto& v : row) r.push_back(json_number(v));
        values.rows.push_back(std::move(r));
        values.labels.emplace_back();
      }
      if (body.contains("labels")) {
        const auto labels = body["labels"].get<std::vector<std::string>>();
        if (labels.size() != values.rows.size()) throw HttpError(422, "invalid_input", "label count mismatch");
        values.labels = labels;
      }
      std::optional<CsvTable> times;
      if (body.contains("times") && !body["times"].is_null()) {
        CsvTable t;
        const json& tj = body["times"];
        if (!tj.empty() && tj.front().is_array()) {
          for (const auto& row : tj) t.rows.push_back(vector_to_std(vector_from_json(row)));
        } else {
          t.rows.push_back(vector_to_std(vector_from_json(tj)));
        }
        t.labels.assign(t.rows.size(), "");
        times = std::move(t);
      }
      return make_sample(values, times);
    } catch (const json::exception& e) {
      throw HttpError(422, "invalid_input", std::string("malformed signal: ") + e.what());
    }
  }

  static std::vector<double> vector_to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

  static FitConfig fit_config(const Req& req, const json& body) {
    FitConfig c;
    auto param = [&](const char* key) -> std::optional<std::string> {
      if (req.has_param(key)) return req.get_param_value(key);
      return std::nullopt;
    };
    auto int_param = [&](const char* key, long fallback) -> long {
      if (auto v = param(key)) {
        long x = 0;
        const auto res = std::from_chars(v->data(), v->data() + v->size(), x);
        if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
          throw HttpError(422, "invalid_input", std::string("invalid query parameter '") + key + "'");
        }
        return x;
      }
      return service_detail::number_param<long>(body, key, fallback);
    };
    c.p = int_param("p", static_cast<long>(c.p));
    c.order = static_cast<int>(int_param("order", c.order));
    c.penalty_order = static_cast<int>(int_param("penalty_order", c.penalty_order));
    if (auto v = param("center")) {
      c.center = *v != "0" && *v != "false";
    } else {
      c.center = service_detail::number_param<bool>(body, "center", true);
    }
    return c;
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", opt_.cors_origin},
                                 {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type, If-Match"},
                                 {"Access-Control-Expose-Headers", "ETag, X-Revision"}});
    server_.Options(R"(.*)", [](const Req&, Res& res) { res.status = 204; });

    server_.Post("/sessions", wrap([this](const Req& req, Res& res) {
      const bool csv = req.get_header_value("Content-Type").rfind("text/csv", 0) == 0;
      const json body = csv ? json::object() : service_detail::parse_body(req);
      SessionSnapshot s;
      s.config = fit_config(req, body);
      s.sample = run_stage("fit", [&] { return sample_from_request(req, body); });
      s.expansion = run_stage("fit", [&] { return fit_stage(s.sample, s.config); });
      const SnapshotPtr ptr = store_.create(std::move(s));
      reply(res, *ptr, session_info(*ptr), 201);
    }));

    server_.Get(R"(/sessions/([^/]+))", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      reply(res, *s, session_info(*s));
    }));

    server_.Post(R"(/sessions/([^/]+)/tune)", wrap([this](const Req& req, Res& res) {
      const json body = service_detail::parse_body(req);
      const auto expected = service_detail::expected_revision(req, body);
      std::vector<double> grid = default_lambda_grid();
      if (body.contains("grid") && !body["grid"].is_null()) {
        grid.clear();
        try {
          for (const auto& v : body["grid"]) grid.push_back(json_number(v));
        } catch (const Error& e) {
          throw HttpError(422, "invalid_input", e.what());
        }
      }
      TuneOptions opt;
      opt.ell = service_detail::number_param<double>(body, "ell", 0.1);
      opt.shrink = service_detail::shrink_param(body);
      opt.with_cv = service_detail::number_param<bool>(body, "cv", false);
      if (body.contains("q") && !body["q"].is_null()) opt.q = service_detail::number_param<Index>(body, "q", 1);
      const SnapshotPtr s = store_.update(req.matches[1], expected, [&](const SessionSnapshot& base) {
        SessionSnapshot next = base;
        next.tuning = run_stage("tune", [&] { return tune(base.expansion, grid, opt); });
        next.ell = opt.ell;
        return next;
      });
      reply(res, *s, json{{"tuning", tuning_json(*s->tuning)}});
    }));

    server_.Post(R"(/sessions/([^/]+)/decompose)", wrap([this](const Req& req, Res& res) {
      const json body = service_detail::parse_body(req);
      const auto expected = service_detail::expected_revision(req, body);
      const ShrinkMode mode = service_detail::shrink_param(body);
      const SnapshotPtr s = store_.update(req.matches[1], expected, [&](const SessionSnapshot& base) {
        double lambda = 0.0;
        Index q = 0;
        if (base.tuning) {
          lambda = base.tuning->lambda_star;
          q = base.tuning->q_star;
        }
        const bool has_lambda = body.contains("lambda") && !body["lambda"].is_null();
        const bool has_q = body.contains("q") && !body["q"].is_null();
        if ((!has_lambda || !has_q) && !base.tuning) {
          throw HttpError(422, "invalid_configuration", "lambda and q are required before tuning");
        }
        if (has_lambda) lambda = service_detail::number_param<double>(body, "lambda", lambda);
        if (has_q) q = service_detail::number_param<Index>(body, "q", q);
        SessionSnapshot next = base;
        next.decomposition = run_stage("decompose", [&] { return decompose(base.expansion, lambda, q, mode); });
        next.selection.clear();
        return next;
      });
      reply(res, *s, session_info(*s));
    }));

    server_.Get(R"(/sessions/([^/]+)/components)", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      const Decomposition& d = require_decomposition(*s);
      const bool full = req.has_param("full") && req.get_param_value("full") != "0";
      const Vector grid = display_grid(s->sample);
      const auto idx = service_detail::decimation(grid.size(), opt_.max_points, full);
      const Matrix psi = eval_basis(*s->expansion.basis, grid) * d.fica.psi_coefs;
      const double gauss = static_cast<double>(d.q) + 2.0;
      json comps = json::array();
      for (Index l = 0; l < d.q; ++l) {
        const double rho = d.fica.kurtosis_eigenvalues(l);
        comps.push_back(json{{"index", l + 1},
                             {"rho", number_json(rho, Precision::report)},
                             {"gaussian_distance", number_json(std::abs(rho - gauss), Precision::report)},
                             {"selected", std::find(s->selection.begin(), s->selection.end(), l) != s->selection.end()},
                             {"channel_scores", vector_json(d.fica.component_scores.col(l))},
                             {"time_course", service_detail::sampled(psi.col(l), idx)},
                             {"psi_coefs", vector_json(d.fica.psi_coefs.col(l))}});
      }
      json by_distance = json::array();
      for (Index l : d.fica.by_gaussian_distance()) by_distance.push_back(l + 1);
      reply(res, *s,
            json{{"q", d.q},
                 {"lambda", number_json(d.lambda, Precision::report)},
                 {"model_hash", model_hash(d)},
                 {"times", service_detail::sampled(grid, idx)},
                 {"order_by_gaussian_distance", by_distance},
                 {"components", comps}});
    }));

    server_.Put(R"(/sessions/([^/]+)/selection)", wrap([this](const Req& req, Res& res) {
      const json body = service_detail::parse_body(req);
      const auto expected = service_detail::expected_revision(req, body);
      if (!body.contains("indices") || !body["indices"].is_array()) {
        throw HttpError(422, "invalid_input", "body needs an 'indices' array of 1-based component numbers");
      }
      std::vector<Index> sel;
      for (const auto& v : body["indices"]) {
        if (!v.is_number_integer()) throw HttpError(422, "invalid_selection", "indices must be integers");
        sel.push_back(v.get<Index>() - 1);
      }
      const SnapshotPtr s = store_.update(req.matches[1], expected, [&](const SessionSnapshot& base) {
        const Decomposition& d = require_decomposition(base);
        validate_selection(sel, d.q);
        SessionSnapshot next = base;
        next.selection = sel;
        std::sort(next.selection.begin(), next.selection.end());
        return next;
      });
      reply(res, *s, session_info(*s));
    }));

    server_.Get(R"(/sessions/([^/]+)/cleaned)", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      const Decomposition& d = require_decomposition(*s);
      const CleanedSignal cleaned = run_stage("clean", [&] { return clean_stage(s->expansion, d, s->selection); });
      if (req.has_param("format") && req.get_param_value("format") == "csv") {
        res.set_header("X-Revision", std::to_string(s->revision));
        res.set_header("ETag", "\"" + std::to_string(s->revision) + "\"");
        res.set_content(cleaned_csv(cleaned, s->expansion, s->sample), "text/csv");
        return;
      }
      std::vector<Index> channels;
      if (req.has_param("channels")) {
        const SelectionSpec spec = parse_selection(req.get_param_value("channels"));
        if (spec.mode != SelectionSpec::Mode::indices) {
          throw HttpError(422, "invalid_input", "channels must be 1-based indices");
        }
        for (Index c : spec.indices) {
          if (c < 1 || c > s->expansion.n()) throw HttpError(422, "invalid_input", "channel " + std::to_string(c) + " out of range");
          channels.push_back(c - 1);
        }
      } else {
        for (Index c = 0; c < s->expansion.n(); ++c) channels.push_back(c);
      }
      const bool full = req.has_param("full") && req.get_param_value("full") != "0";
      const std::vector<Vector> curves = evaluate_on_sample(cleaned, *s->expansion.basis, s->sample, true);
      json out = json::array();
      for (Index c : channels) {
        const auto ci = static_cast<std::size_t>(c);
        const auto idx = service_detail::decimation(curves[ci].size(), opt_.max_points, full);
        out.push_back(json{{"channel", c + 1},
                           {"label", s->sample.curve_name(ci)},
                           {"times", service_detail::sampled(s->sample.times[ci], idx)},
                           {"cleaned", service_detail::sampled(curves[ci], idx)},
                           {"raw", service_detail::sampled(s->sample.values[ci], idx)}});
      }
      json sel = json::array();
      for (Index l : s->selection) sel.push_back(l + 1);
      reply(res, *s, json{{"selection", sel}, {"model_hash", model_hash(d)}, {"curves", out}});
    }));

    server_.Get(R"(/sessions/([^/]+)/summary)", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      const Decomposition& d = require_decomposition(*s);
      const Summary sum = run_stage("summary", [&] { return summarize(s->expansion, d, s->tuning, s->ell); });
      reply(res, *s, json{{"summary", summary_json(sum)}, {"model_hash", model_hash(d)}});
    }));

    server_.Get(R"(/sessions/([^/]+)/surface)", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      if (!s->tuning) throw HttpError(409, "not_tuned", "run POST /sessions/{id}/tune first");
      std::ostringstream out;
      write_surface_csv(out, *s->tuning);
      res.set_header("X-Revision", std::to_string(s->revision));
      res.set_content(out.str(), "text/csv");
    }));

    server_.Post(R"(/sessions/([^/]+)/persist)", wrap([this](const Req& req, Res& res) {
      const SnapshotPtr s = store_.get(req.matches[1]);
      if (!opt_.persist_dir) throw HttpError(422, "invalid_configuration", "server started without a persist directory");
      const std::filesystem::path path = std::filesystem::path(*opt_.persist_dir) / (s->id + ".json");
      json state{{"id", s->id},
                 {"revision", s->revision},
                 {"expansion", expansion_json(s->expansion)},
                 {"info", session_info(*s)}};
      if (s->tuning) state["tuning"] = tuning_json(*s->tuning, Precision::exact);
      std::ofstream out(path);
      if (!out || !(out << state.dump(1) << '\n')) throw Error(Errc::io, "cannot write " + path.string());
      reply(res, *s, json{{"path", path.string()}});
    }));
  }

  ServiceOptions opt_;
  httplib::Server server_;
  SessionStore store_;
};

}  // namespace bfica
