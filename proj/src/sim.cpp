#include "apc/sim.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>

#include "apc/csv.hpp"
#include "apc/error.hpp"
#include "apc/rng.hpp"

namespace apc {

void SimConfig::validate() const {
  if (policies.empty()) fail(ErrorCode::Config, "no policies selected");
  if (n_observers == 0) fail(ErrorCode::Config, "n_observers must be >= 1");
  if (trials_max == 0) fail(ErrorCode::Config, "trials_max must be >= 1");
  if (scale_levels < 2) fail(ErrorCode::Config, "scale_levels must be >= 2");
  if (const auto* u = std::get_if<UniformMidpoint>(&true_q); u && !(u->lo <= u->hi))
    fail(ErrorCode::Config, "true-q range is empty");
  try {
    PsychometricModel{0.0, slope, lapse}.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

namespace {

struct ObserverRun {
  double initial_sq_error = 0.0;
  std::vector<double> sq_error;
  std::vector<double> variance;
};

double draw_midpoint(const SimConfig& config, Rng& rng) {
  if (const auto* fixed = std::get_if<FixedMidpoint>(&config.true_q)) return fixed->q;
  const auto& u = std::get<UniformMidpoint>(config.true_q);
  return rng.uniform(u.lo, u.hi);
}

ObserverRun run_observer(const SimConfig& config, PolicyKind kind, std::size_t observer) {
  const std::uint64_t observer_seed = derive_seed(config.seed, observer);
  Rng q_rng(derive_seed(observer_seed, 0));
  const double q = draw_midpoint(config, q_rng);
  const PsychometricModel observer_model{q, config.slope, config.lapse};

  PolicyOptions opts;
  opts.kind = kind;
  opts.max_level = config.scale_levels;
  opts.likelihood = {config.slope, config.lapse};
  opts.n_particles = config.n_particles;
  opts.staircase_start = config.scale_levels;
  Policy policy(opts, derive_seed(observer_seed, 100 + static_cast<std::uint64_t>(kind)));
  // Same response stream for every policy (common random numbers).
  Rng responses(derive_seed(observer_seed, 1));

  ObserverRun run;
  run.sq_error.reserve(config.trials_max);
  if (const auto* post = policy.posterior()) {
    const double e = post->mean() - q;
    run.initial_sq_error = e * e;
  }
  for (std::size_t t = 0; t < config.trials_max; ++t) {
    const int level = policy.next_level();
    policy.observe(level, simulate_response(observer_model, level, responses));
    double estimate;
    if (const auto* post = policy.posterior()) {
      estimate = post->mean();
      const double sd = post->sd();
      run.variance.push_back(sd * sd);
    } else {
      estimate = staircase_estimate(*policy.staircase()).pse;
    }
    run.sq_error.push_back((estimate - q) * (estimate - q));
  }
  return run;
}

}  // namespace

std::vector<MseCurve> run_mse_experiment(const SimConfig& config) {
  config.validate();
  std::vector<PolicyKind> kinds = config.policies;
  std::sort(kinds.begin(), kinds.end(),
            [](PolicyKind a, PolicyKind b) { return to_string(a) < to_string(b); });
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());

  const std::size_t jobs = kinds.size() * config.n_observers;
  std::vector<ObserverRun> runs(jobs);
  unsigned threads = config.threads ? config.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs)));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < jobs; j += threads)
          runs[j] = run_observer(config, kinds[j / config.n_observers],
                                 j % config.n_observers);
      });
    }
  }

  std::vector<MseCurve> curves;
  const double n = static_cast<double>(config.n_observers);
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    MseCurve curve;
    curve.policy = kinds[k];
    curve.n_observers = config.n_observers;
    curve.seed = config.seed;
    curve.mse.assign(config.trials_max, 0.0);
    const bool has_posterior = kinds[k] != PolicyKind::Staircase;
    if (has_posterior) curve.mean_posterior_variance.assign(config.trials_max, 0.0);
    double initial = 0.0;
    // Reduce in observer order so the sum never depends on scheduling.
    for (std::size_t o = 0; o < config.n_observers; ++o) {
      const auto& run = runs[k * config.n_observers + o];
      initial += run.initial_sq_error;
      for (std::size_t t = 0; t < config.trials_max; ++t) {
        curve.mse[t] += run.sq_error[t];
        if (has_posterior) curve.mean_posterior_variance[t] += run.variance[t];
      }
    }
    for (auto& v : curve.mse) v /= n;
    for (auto& v : curve.mean_posterior_variance) v /= n;
    if (has_posterior) curve.initial_mse = initial / n;
    curves.push_back(std::move(curve));
  }
  return curves;
}

void write_curves(std::span<const MseCurve> curves, std::ostream& out) {
  if (curves.empty()) fail(ErrorCode::Config, "no curves to export");
  std::vector<const MseCurve*> sorted;
  for (const auto& c : curves) sorted.push_back(&c);
  std::stable_sort(sorted.begin(), sorted.end(), [](const MseCurve* a, const MseCurve* b) {
    return to_string(a->policy) < to_string(b->policy);
  });
  out << "policy,trial,mse,n_observers,seed\n";
  for (const auto* c : sorted) {
    for (std::size_t t = 0; t < c->mse.size(); ++t) {
      out << to_string(c->policy) << ',' << (t + 1) << ',' << csv::format_double(c->mse[t])
          << ',' << c->n_observers << ',' << c->seed << '\n';
    }
  }
}

void export_curves(std::span<const MseCurve> curves, const std::filesystem::path& path) {
  std::ostringstream out;
  write_curves(curves, out);
  csv::write_file(path, out.str());
}

std::vector<MseCurve> read_curves(std::istream& in) {
  const auto table = csv::parse(in, "curves", {"policy", "trial", "mse", "n_observers", "seed"});
  const auto c_policy = table.column("policy");
  const auto c_trial = table.column("trial");
  const auto c_mse = table.column("mse");
  const auto c_n = table.column("n_observers");
  const auto c_seed = table.column("seed");
  std::vector<MseCurve> curves;
  for (const auto& row : table.rows()) {
    const PolicyKind kind = parse_policy_kind(table.field(row, c_policy));
    if (curves.empty() || curves.back().policy != kind) {
      MseCurve c;
      c.policy = kind;
      c.n_observers = static_cast<std::size_t>(table.integer(row, c_n));
      c.seed = std::stoull(table.field(row, c_seed));
      curves.push_back(std::move(c));
    }
    auto& curve = curves.back();
    if (table.integer(row, c_trial) != static_cast<long long>(curve.mse.size() + 1))
      fail(ErrorCode::Ingest, "curves:" + std::to_string(row.line) + ": trials out of order");
    curve.mse.push_back(table.number(row, c_mse));
  }
  return curves;
}

}  // namespace apc
