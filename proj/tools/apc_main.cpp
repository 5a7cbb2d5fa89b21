#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "apc/apc.h"
#include "json.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

using nlohmann::json;

// Owns a string handed out by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { apc_free_string(p); }
  std::string str() const { return p ? p : ""; }
};

struct CommandError {
  int exit_code;
};

void check(apc_status status) {
  if (status == APC_OK) return;
  std::cerr << "apc: " << apc_status_name(status) << ": " << apc_last_error() << '\n';
  throw CommandError{status == APC_ERR_INTERNAL ? kExitInternal : kExitData};
}

void write_output(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "apc: io: cannot write " << path << '\n';
    throw CommandError{kExitData};
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

// Every long option also reads APC_<NAME> from the environment; flags on
// the command line take precedence.
void bind_env(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "version") continue;
    std::string env = "APC_";
    for (char c : names.front()) env += c == '-' ? '_' : static_cast<char>(std::toupper(c));
    opt->envname(env);
  }
  for (CLI::App* sub : app->get_subcommands({})) bind_env(sub);
}

int serve(apc_server_options& opts) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  apc_server* server = nullptr;
  check(apc_server_create(&opts, &server));
  LibString errors;
  if (apc_server_load_errors(server, &errors.p) == APC_OK)
    for (const auto& e : json::parse(errors.str()))
      std::cerr << "apc: warning: skipped session log " << e.get<std::string>() << '\n';
  std::cerr << "apc: listening on " << opts.host << ':' << apc_server_port(server) << '\n';

  std::jthread waiter([server, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    apc_server_stop(server);
  });
  const apc_status status = apc_server_run(server);
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  apc_server_destroy(server);
  check(status);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive paired-comparison toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", apc_version());

  // simulate
  auto* sim = app.add_subcommand("simulate", "MSE-vs-trial curves for simulated observers");
  apc_sim_options so;
  apc_sim_options_init(&so);
  std::vector<std::string> policies;
  std::optional<double> fixed_q;
  std::string sim_out;
  sim->add_option("--policy", policies, "bald, staircase or random; repeatable (default all)")
      ->delimiter(',')
      ->check(CLI::IsMember({"bald", "staircase", "random"}));
  sim->add_option("--observers", so.observers, "number of simulated observers")
      ->capture_default_str();
  sim->add_option("--trials", so.trials, "trials per observer")->capture_default_str();
  sim->add_option("--seed", so.seed, "master seed")->capture_default_str();
  sim->add_option("--slope", so.slope, "observer slope")->capture_default_str();
  sim->add_option("--lapse", so.lapse, "observer lapse rate")->capture_default_str();
  sim->add_option("--q", fixed_q, "fixed true midpoint (default: uniform over --q-lo..--q-hi)");
  sim->add_option("--q-lo", so.q_lo, "lower bound of random midpoints")->capture_default_str();
  sim->add_option("--q-hi", so.q_hi, "upper bound of random midpoints")->capture_default_str();
  sim->add_option("--threads", so.threads, "worker threads, 0 for all cores")
      ->capture_default_str();
  sim->add_option("--out", sim_out, "output CSV (default stdout)");

  // scale
  auto* scale = app.add_subcommand("scale", "Reference scale construction");
  scale->require_subcommand(1);
  auto* build = scale->add_subcommand("build", "Initial scale from rate-distortion data");
  std::string rd_path, scale_out;
  std::size_t levels = 50;
  build->add_option("--rd", rd_path, "rate-distortion CSV")->required()->check(CLI::ExistingFile);
  build->add_option("--levels", levels, "number of scale levels")->capture_default_str();
  build->add_option("--out", scale_out, "output scale CSV")->required();

  auto* pairs = scale->add_subcommand("fit-pairs", "Perceptual curve from pairwise judgments");
  std::string judgments_path, curve_out;
  std::size_t pair_levels = 0;
  pairs->add_option("--judgments", judgments_path, "pairwise judgments CSV")
      ->required()
      ->check(CLI::ExistingFile);
  pairs->add_option("--levels", pair_levels, "scale size (default: largest level seen)");
  pairs->add_option("--out", curve_out, "output curve CSV")->required();

  auto* lin = scale->add_subcommand("linearize", "Resample a scale to equal perceptual steps");
  std::string lin_scale, lin_curve, lin_rd, lin_out;
  lin->add_option("--scale", lin_scale, "scale CSV")->required()->check(CLI::ExistingFile);
  lin->add_option("--curve", lin_curve, "perceptual curve CSV")->required()->check(CLI::ExistingFile);
  lin->add_option("--rd", lin_rd, "rate-distortion CSV to re-select encodes")
      ->check(CLI::ExistingFile);
  lin->add_option("--out", lin_out, "output scale CSV")->required();

  auto* nmse = scale->add_subcommand("nmse", "Normalized MSE of a curve against a straight line");
  std::string nmse_curve;
  nmse->add_option("--curve", nmse_curve, "perceptual curve CSV")->required()->check(CLI::ExistingFile);

  // fit
  auto* fit = app.add_subcommand("fit", "Per-rater logistic fits with screening");
  std::string responses_path, fits_out;
  fit->add_option("--responses", responses_path, "APC responses CSV")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--out", fits_out, "output fits CSV")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Effect sizes and rating summaries");
  analyze->require_subcommand(1);
  auto* effect = analyze->add_subcommand("effect-size", "Paired t-tests with Bonferroni correction");
  std::vector<std::string> a_paths, b_paths;
  std::size_t family = 0;
  double alpha = 0.05;
  bool effect_json = false;
  effect->add_option("--a", a_paths, "condition A scores (rater_id,score); repeatable")
      ->required()
      ->check(CLI::ExistingFile);
  effect->add_option("--b", b_paths, "condition B scores, matched to each --a")
      ->required()
      ->check(CLI::ExistingFile);
  effect->add_option("--family", family, "comparisons in the family (default: number given)");
  effect->add_option("--alpha", alpha, "significance level")->capture_default_str();
  effect->add_flag("--json", effect_json, "print JSON");

  auto* ratings = analyze->add_subcommand("ratings", "MOS and DS-MOS summaries with screening");
  std::string ratings_path;
  bool ratings_json = false;
  ratings->add_option("--ratings", ratings_path, "ratings CSV")->required()->check(CLI::ExistingFile);
  ratings->add_flag("--json", ratings_json, "print JSON");

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP session service");
  apc_server_options srv_opts;
  apc_server_options_init(&srv_opts);
  std::string host = srv_opts.host, data_dir = srv_opts.data_dir, rater_token, exp_token;
  std::vector<std::string> manifests;
  int port = srv_opts.port;
  bool sync = false;
  srv->add_option("--host", host, "listen address")->capture_default_str();
  srv->add_option("--port", port, "listen port, 0 for any")->capture_default_str();
  srv->add_option("--data-dir", data_dir, "session log directory")->capture_default_str();
  srv->add_option("--manifest", manifests, "stimulus manifest JSON; repeatable")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  srv->add_option("--rater-token", rater_token, "bearer token for rater endpoints");
  srv->add_option("--experimenter-token", exp_token, "bearer token for estimates");
  srv->add_flag("--sync", sync, "fdatasync after every event");

  // replay
  auto* rep = app.add_subcommand("replay", "Verify a session log and print its estimates");
  std::string log_path;
  bool replay_json = false;
  rep->add_option("--log", log_path, "session JSONL log")->required()->check(CLI::ExistingFile);
  rep->add_flag("--json", replay_json, "print JSON");

  bind_env(&app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sim) {
      std::string list;
      for (const auto& p : policies) list += (list.empty() ? "" : ",") + p;
      so.policies = list.c_str();
      if (fixed_q) {
        so.fixed_q = 1;
        so.q = *fixed_q;
      }
      LibString csv;
      check(apc_simulate(&so, &csv.p));
      write_output(csv.str(), sim_out);
    } else if (*build) {
      check(apc_scale_build(rd_path.c_str(), levels, scale_out.c_str()));
    } else if (*pairs) {
      LibString report;
      check(apc_scale_fit_pairs(judgments_path.c_str(), pair_levels, curve_out.c_str(), &report.p));
      const auto r = json::parse(report.str());
      std::cout << "levels " << r["levels"] << ", judgments " << r["judgments"]
                << ", iterations " << r["iterations"]
                << (r["converged"].get<bool>() ? ", converged" : ", NOT converged");
      if (!r["nmse"].is_null()) std::cout << ", nmse " << fixed(r["nmse"].get<double>(), 6);
      std::cout << '\n';
    } else if (*lin) {
      check(apc_scale_linearize(lin_scale.c_str(), lin_curve.c_str(), or_null(lin_rd),
                                lin_out.c_str()));
    } else if (*nmse) {
      double value = 0.0;
      check(apc_scale_nmse(nmse_curve.c_str(), &value));
      std::cout << fixed(value, 6) << '\n';
    } else if (*fit) {
      LibString summary;
      check(apc_fit_responses(responses_path.c_str(), fits_out.c_str(), &summary.p));
      const auto s = json::parse(summary.str());
      std::cout << s["fits"].size() << " fits: " << s["included"] << " included, "
                << s["excluded"] << " excluded\n";
      for (const auto& f : s["fits"])
        if (!f["verdict"]["include"].get<bool>())
          std::cout << "  excluded " << f["rater_id"].get<std::string>() << '/'
                    << f["variant_id"].get<std::string>() << ": "
                    << f["verdict"]["reason"].get<std::string>() << '\n';
    } else if (*effect) {
      if (a_paths.size() != b_paths.size()) {
        std::cerr << "apc: --a and --b must be given the same number of times\n";
        return kExitUsage;
      }
      std::vector<const char*> a, b;
      for (const auto& p : a_paths) a.push_back(p.c_str());
      for (const auto& p : b_paths) b.push_back(p.c_str());
      LibString report;
      check(apc_effect_size(a.data(), b.data(), a.size(), family, alpha, &report.p));
      const auto r = json::parse(report.str());
      if (effect_json) {
        std::cout << r.dump(2) << '\n';
      } else {
        std::cout << "comparison,n,d,t,p,p_adjusted,significant\n";
        for (const auto& c : r["comparisons"])
          std::cout << c["label"].get<std::string>() << ',' << c["n"] << ','
                    << fixed(c["d"].get<double>(), 4) << ',' << fixed(c["t"].get<double>(), 4)
                    << ',' << fixed(c["p"].get<double>(), 6) << ','
                    << fixed(c["p_adjusted"].get<double>(), 6) << ','
                    << (c["significant"].get<bool>() ? "yes" : "no") << '\n';
      }
    } else if (*ratings) {
      LibString report;
      check(apc_analyze_ratings(ratings_path.c_str(), &report.p));
      const auto r = json::parse(report.str());
      if (ratings_json) {
        std::cout << r.dump(2) << '\n';
      } else {
        for (const auto& x : r["raters"])
          if (!x["include"].get<bool>())
            std::cout << "excluded rater " << x["rater_id"].get<std::string>() << ": "
                      << x["reason"].get<std::string>() << '\n';
        std::cout << "scale,variant,mean,ci_lo,ci_hi,n_raters\n";
        for (const auto& s : r["summaries"])
          std::cout << s["scale"].get<std::string>() << ',' << s["variant"].get<std::string>()
                    << ',' << fixed(s["mean"].get<double>(), 4) << ','
                    << fixed(s["ci_lo"].get<double>(), 4) << ','
                    << fixed(s["ci_hi"].get<double>(), 4) << ',' << s["n_raters"] << '\n';
      }
    } else if (*srv) {
      std::vector<const char*> paths;
      for (const auto& m : manifests) paths.push_back(m.c_str());
      srv_opts.host = host.c_str();
      srv_opts.port = port;
      srv_opts.data_dir = data_dir.c_str();
      srv_opts.manifest_paths = paths.data();
      srv_opts.n_manifests = paths.size();
      srv_opts.rater_token = or_null(rater_token);
      srv_opts.experimenter_token = or_null(exp_token);
      srv_opts.sync_writes = sync;
      return serve(srv_opts);
    } else if (*rep) {
      apc_session* session = nullptr;
      check(apc_session_open_log(log_path.c_str(), &session));
      std::size_t done = 0, total = 0;
      int complete = 0;
      apc_session_progress(session, &done, &total, &complete);
      LibString est;
      const apc_status st = apc_session_estimates(session, &est.p);
      apc_session_destroy(session);
      check(st);
      const auto estimates = json::parse(est.str());
      if (replay_json) {
        std::cout << json{{"completed", done},
                          {"total", total},
                          {"status", complete ? "complete" : "active"},
                          {"estimates", estimates}}
                         .dump(2)
                  << '\n';
      } else {
        std::cout << "log ok: " << done << '/' << total << " trials, "
                  << (complete ? "complete" : "active") << '\n';
        std::cout << "variant,pse,uncertainty,n_trials,method\n";
        for (const auto& e : estimates)
          std::cout << e["variant"].get<std::string>() << ','
                    << (e["pse"].is_null() ? "" : fixed(e["pse"].get<double>(), 4)) << ','
                    << (e["uncertainty"].is_null() ? "" : fixed(e["uncertainty"].get<double>(), 4))
                    << ',' << e["n_trials"] << ',' << e["method"].get<std::string>() << '\n';
      }
    }
  } catch (const CommandError& e) {
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "apc: internal: " << e.what() << '\n';
    return kExitInternal;
  }
  return 0;
}
