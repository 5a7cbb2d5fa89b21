#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "apc/policy.hpp"

namespace apc {

struct FixedMidpoint {
  double q = 25.5;
};

struct UniformMidpoint {
  double lo = 5.0;
  double hi = 45.0;
};

struct SimConfig {
  std::vector<PolicyKind> policies{PolicyKind::Bald, PolicyKind::Staircase,
                                   PolicyKind::Random};
  std::size_t n_observers = 500;
  std::size_t trials_max = 100;
  std::variant<FixedMidpoint, UniformMidpoint> true_q = UniformMidpoint{};
  double slope = kDefaultSlope;
  double lapse = kDefaultLapse;
  std::uint64_t seed = 1;
  int scale_levels = kDefaultLevels;
  std::size_t n_particles = kDefaultParticles;
  // Worker threads; 0 picks the hardware concurrency. Output does not
  // depend on this.
  unsigned threads = 0;

  void validate() const;
};

struct MseCurve {
  PolicyKind policy = PolicyKind::Bald;
  // Squared error of the estimate before any trial; empty for the staircase,
  // which has no estimate until it has seen a response.
  std::optional<double> initial_mse;
  // mse[t - 1] is the mean squared error after t trials.
  std::vector<double> mse;
  // Mean posterior variance after t trials; empty for the staircase.
  std::vector<double> mean_posterior_variance;
  std::size_t n_observers = 0;
  std::uint64_t seed = 0;
};

// Runs every policy against the same simulated observers and averages the
// squared error of the running estimate per trial. Curves are ordered by
// policy name.
std::vector<MseCurve> run_mse_experiment(const SimConfig& config);

// CSV `policy,trial,mse,n_observers,seed`, rows sorted by (policy, trial).
void write_curves(std::span<const MseCurve> curves, std::ostream& out);
void export_curves(std::span<const MseCurve> curves, const std::filesystem::path& path);
// Reads back what write_curves produced (initial_mse and variances are not
// part of the file).
std::vector<MseCurve> read_curves(std::istream& in);

}  // namespace apc
