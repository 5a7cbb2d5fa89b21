#include "apc/apc.h"

#include <cmath>
#include <cstring>
#include <sstream>
#include <string>

#include "apc/analysis.hpp"
#include "apc/error.hpp"
#include "apc/event_log.hpp"
#include "apc/http.hpp"
#include "apc/scale.hpp"
#include "apc/service.hpp"
#include "apc/session.hpp"
#include "apc/sim.hpp"
#include "json.hpp"

using nlohmann::json;

struct apc_session {
  apc::Session session;
};

struct apc_server {
  std::unique_ptr<apc::Service> service;
  std::unique_ptr<apc::HttpServer> http;
  int port = 0;
};

namespace {

thread_local std::string last_error;

apc_status status_of(apc::ErrorCode code) {
  return static_cast<apc_status>(static_cast<int>(code) + 2);
}

apc_status set_error(apc_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

// Runs `fn`, translating exceptions into status codes and the thread's
// last-error message.
template <typename Fn>
apc_status guarded(Fn&& fn) noexcept {
  try {
    fn();
    last_error.clear();
    return APC_OK;
  } catch (const apc::Error& e) {
    return set_error(status_of(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(APC_ERR_VALIDATION, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(APC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(APC_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(APC_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw apc::Error(apc::ErrorCode::Validation, what);
}

json verdict_json(const apc::Verdict& v) {
  return json{{"include", v.include}, {"reason", v.reason}};
}

}  // namespace

#define APC_REQUIRE_ARG(cond)                                                  \
  do {                                                                         \
    if (!(cond)) return set_error(APC_ERR_INVALID_ARGUMENT, "invalid argument: " #cond); \
  } while (0)

extern "C" {

const char* apc_status_name(apc_status status) {
  switch (status) {
    case APC_OK: return "ok";
    case APC_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case APC_ERR_INTERNAL: return "internal";
    default: break;
  }
  const int code = static_cast<int>(status) - 2;
  if (code >= 0 && code <= static_cast<int>(apc::ErrorCode::NotFound))
    return apc::to_string(static_cast<apc::ErrorCode>(code));
  return "unknown";
}

const char* apc_last_error(void) { return last_error.c_str(); }

void apc_free_string(char* s) { std::free(s); }

const char* apc_version(void) { return "1.0.0"; }

apc_status apc_session_create(const char* config_json, apc_session** out) {
  APC_REQUIRE_ARG(config_json && out);
  return guarded([&] {
    std::vector<apc::FieldError> errors;
    auto config = apc::config_from_json(json::parse(config_json), errors);
    if (!errors.empty())
      throw apc::Error(apc::ErrorCode::Config, errors.front().field + ": " + errors.front().message);
    *out = new apc_session{apc::Session(std::move(config))};
  });
}

apc_status apc_session_open_log(const char* log_path, apc_session** out) {
  APC_REQUIRE_ARG(log_path && out);
  return guarded([&] {
    const auto events = apc::read_event_log(log_path);
    *out = new apc_session{apc::rebuild_session(events).session};
  });
}

void apc_session_destroy(apc_session* session) { delete session; }

apc_status apc_session_next_trial(apc_session* session, char** plan_json) {
  APC_REQUIRE_ARG(session && plan_json);
  return guarded([&] { *plan_json = dup_string(apc::plan_to_json(session->session.next_trial()).dump()); });
}

apc_status apc_session_record(apc_session* session, size_t trial_index, const char* answer) {
  APC_REQUIRE_ARG(session && answer);
  return guarded([&] { session->session.record_response(trial_index, apc::parse_answer(answer)); });
}

apc_status apc_session_estimates(const apc_session* session, char** estimates_json) {
  APC_REQUIRE_ARG(session && estimates_json);
  return guarded([&] {
    json list = json::array();
    for (const auto& e : session->session.estimates()) list.push_back(apc::estimate_to_json(e));
    *estimates_json = dup_string(list.dump());
  });
}

apc_status apc_session_progress(const apc_session* session, size_t* completed, size_t* total,
                                int* complete) {
  APC_REQUIRE_ARG(session);
  if (completed) *completed = session->session.cursor();
  if (total) *total = session->session.total_trials();
  if (complete) *complete = session->session.status() == apc::SessionStatus::Complete;
  last_error.clear();
  return APC_OK;
}

void apc_sim_options_init(apc_sim_options* o) {
  if (!o) return;
  const apc::SimConfig d;
  const auto q = std::get<apc::UniformMidpoint>(d.true_q);
  *o = apc_sim_options{nullptr, d.n_observers, d.trials_max, d.seed, d.slope, d.lapse, 0, 25.0,
                       q.lo, q.hi, 0};
}

apc_status apc_simulate(const apc_sim_options* o, char** csv) {
  APC_REQUIRE_ARG(o && csv);
  return guarded([&] {
    apc::SimConfig c;
    if (o->policies && *o->policies) {
      c.policies.clear();
      std::stringstream list(o->policies);
      std::string item;
      while (std::getline(list, item, ','))
        if (!item.empty()) c.policies.push_back(apc::parse_policy_kind(item));
      require(!c.policies.empty(), "no policy selected");
    }
    c.n_observers = o->observers;
    c.trials_max = o->trials;
    c.seed = o->seed;
    c.slope = o->slope;
    c.lapse = o->lapse;
    if (o->fixed_q)
      c.true_q = apc::FixedMidpoint{o->q};
    else
      c.true_q = apc::UniformMidpoint{o->q_lo, o->q_hi};
    c.threads = o->threads;
    std::ostringstream out;
    apc::write_curves(apc::run_mse_experiment(c), out);
    *csv = dup_string(out.str());
  });
}

apc_status apc_scale_build(const char* rd_path, size_t levels, const char* out_path) {
  APC_REQUIRE_ARG(rd_path && out_path && levels >= 2);
  return guarded([&] {
    const auto rd = apc::read_rd_csv(rd_path);
    apc::write_scale_csv(apc::build_initial_scale(rd, levels), out_path);
  });
}

apc_status apc_scale_fit_pairs(const char* judgments_path, size_t levels, const char* out_path,
                               char** report_json) {
  APC_REQUIRE_ARG(judgments_path && out_path);
  return guarded([&] {
    const auto judgments = apc::read_judgments_csv(judgments_path);
    if (levels == 0)
      for (const auto& j : judgments)
        levels = std::max<std::size_t>(levels, static_cast<std::size_t>(std::max(j.level_a, j.level_b)));
    const auto fit = apc::fit_pairwise(judgments, levels);
    apc::write_curve_csv(fit.curve, out_path);
    if (report_json) {
      json report{{"levels", levels},
                  {"judgments", judgments.size()},
                  {"iterations", fit.iterations},
                  {"gradient_norm", fit.gradient_norm},
                  {"converged", fit.converged}};
      try {
        report["nmse"] = apc::linearity_nmse(fit.curve);
      } catch (const apc::Error&) {
        report["nmse"] = nullptr;
      }
      *report_json = dup_string(report.dump());
    }
  });
}

apc_status apc_scale_linearize(const char* scale_path, const char* curve_path,
                               const char* rd_path, const char* out_path) {
  APC_REQUIRE_ARG(scale_path && curve_path && out_path);
  return guarded([&] {
    const auto scale = apc::read_scale_csv(scale_path);
    const auto curve = apc::read_curve_csv(curve_path);
    if (rd_path) {
      const apc::RdTable rd(apc::read_rd_csv(rd_path));
      apc::write_scale_csv(apc::resample_linear(scale, curve, &rd), out_path);
    } else {
      apc::write_scale_csv(apc::resample_linear(scale, curve), out_path);
    }
  });
}

apc_status apc_scale_nmse(const char* curve_path, double* nmse) {
  APC_REQUIRE_ARG(curve_path && nmse);
  return guarded([&] { *nmse = apc::linearity_nmse(apc::read_curve_csv(curve_path)); });
}

apc_status apc_fit_responses(const char* responses_path, const char* out_path,
                             char** summary_json) {
  APC_REQUIRE_ARG(responses_path && out_path);
  return guarded([&] {
    const auto responses = apc::read_apc_responses(responses_path);
    const auto fits = apc::fit_responses(responses);
    apc::write_fits_csv(fits, out_path);
    if (summary_json) {
      json rows = json::array();
      std::size_t included = 0;
      for (const auto& f : fits) {
        included += f.verdict.include;
        json row{{"rater_id", f.rater},
                 {"variant_id", f.variant},
                 {"n_trials", f.n_trials},
                 {"verdict", verdict_json(f.verdict)}};
        row["pse"] = f.fit && f.fit->diagnostics.converged ? json(f.fit->params.midpoint)
                                                           : json(nullptr);
        rows.push_back(row);
      }
      *summary_json = dup_string(
          json{{"fits", rows}, {"included", included}, {"excluded", fits.size() - included}}
              .dump());
    }
  });
}

apc_status apc_effect_size(const char* const* a_paths, const char* const* b_paths,
                           size_t n_comparisons, size_t family_size, double alpha,
                           char** report_json) {
  APC_REQUIRE_ARG(a_paths && b_paths && n_comparisons > 0 && report_json);
  return guarded([&] {
    std::vector<apc::PairedComparison> comparisons;
    for (std::size_t i = 0; i < n_comparisons; ++i) {
      require(a_paths[i] && b_paths[i], "null path");
      const std::filesystem::path a(a_paths[i]), b(b_paths[i]);
      comparisons.push_back(apc::match_scores(a.stem().string() + " vs " + b.stem().string(),
                                              apc::read_scores_csv(a), apc::read_scores_csv(b)));
    }
    if (family_size == 0) family_size = n_comparisons;
    json rows = json::array();
    for (const auto& r : apc::paired_t_bonferroni(comparisons, family_size, alpha))
      rows.push_back({{"label", r.label},
                      {"n", r.n},
                      {"d", r.d},
                      {"t", r.t},
                      {"p", r.p},
                      {"p_adjusted", r.p_adjusted},
                      {"significant", r.significant}});
    *report_json = dup_string(
        json{{"family_size", family_size}, {"alpha", alpha}, {"comparisons", rows}}.dump());
  });
}

apc_status apc_analyze_ratings(const char* ratings_path, char** report_json) {
  APC_REQUIRE_ARG(ratings_path && report_json);
  return guarded([&] {
    const auto report = apc::analyze_ratings(apc::read_ratings_csv(ratings_path));
    json raters = json::array();
    for (const auto& [rater, v] : report.raters)
      raters.push_back({{"rater_id", rater}, {"include", v.include}, {"reason", v.reason}});
    json summaries = json::array();
    for (const auto& s : report.summaries)
      summaries.push_back({{"scale", s.scale == apc::RatingScale::Mos ? "MOS" : "DS-MOS"},
                           {"variant", s.variant},
                           {"mean", s.ci.mean},
                           {"ci_lo", s.ci.lo},
                           {"ci_hi", s.ci.hi},
                           {"n_raters", s.ci.n}});
    *report_json = dup_string(json{{"raters", raters}, {"summaries", summaries}}.dump());
  });
}

void apc_server_options_init(apc_server_options* o) {
  if (!o) return;
  *o = apc_server_options{"127.0.0.1", 8080, "data", nullptr, 0, nullptr, nullptr, 0};
}

apc_status apc_server_create(const apc_server_options* o, apc_server** out) {
  APC_REQUIRE_ARG(o && out && o->data_dir && o->host);
  APC_REQUIRE_ARG(o->n_manifests == 0 || o->manifest_paths);
  return guarded([&] {
    apc::ServiceOptions so;
    so.data_dir = o->data_dir;
    for (std::size_t i = 0; i < o->n_manifests; ++i)
      so.manifests.push_back(apc::read_manifest(o->manifest_paths[i]));
    if (o->rater_token && *o->rater_token) so.rater_token = o->rater_token;
    if (o->experimenter_token && *o->experimenter_token)
      so.experimenter_token = o->experimenter_token;
    so.sync_writes = o->sync_writes != 0;
    auto server = std::make_unique<apc_server>();
    server->service = std::make_unique<apc::Service>(std::move(so));
    server->http = std::make_unique<apc::HttpServer>(*server->service);
    server->port = server->http->bind(o->host, o->port);
    *out = server.release();
  });
}

int apc_server_port(const apc_server* server) { return server ? server->port : -1; }

apc_status apc_server_load_errors(const apc_server* server, char** out) {
  APC_REQUIRE_ARG(server && out);
  return guarded([&] { *out = dup_string(json(server->service->load_errors()).dump()); });
}

apc_status apc_server_run(apc_server* server) {
  APC_REQUIRE_ARG(server);
  return guarded([&] { server->http->listen(); });
}

void apc_server_stop(apc_server* server) {
  if (server) server->http->stop();
}

void apc_server_destroy(apc_server* server) {
  if (!server) return;
  server->http.reset();
  delete server;
}

}  // extern "C"
