#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "apc/posterior.hpp"
#include "apc/psychometric.hpp"
#include "apc/rng.hpp"

namespace apc {

inline constexpr int kMinLevel = 1;
inline constexpr int kDefaultLevels = 50;

// Argmax candidates whose acquisition is within this of the best are ties.
inline constexpr double kAcquisitionTieTolerance = 1e-12;

// Per-particle response probabilities and entropies at a fixed set of
// candidate levels. Particle positions never move, so a session builds this
// once and only the weights change between trials.
class BaldTable {
 public:
  BaldTable(const ParticlePosterior& posterior, std::span<const double> levels);

  std::span<const double> levels() const { return levels_; }
  // Mutual information between the next response and the midpoint, in nats.
  std::vector<double> acquisition(std::span<const double> weights) const;

 private:
  std::vector<double> levels_;
  std::size_t n_particles_ = 0;
  std::vector<double> prob_;     // level-major, n_levels * n_particles
  std::vector<double> entropy_;  // same layout
};

std::vector<double> bald_acquisition(const ParticlePosterior& posterior,
                                     std::span<const double> candidate_levels);

// Index of the best entry; near-ties resolve to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

int select_next_bald(const ParticlePosterior& posterior, int min_level = kMinLevel,
                     int max_level = kDefaultLevels);

struct StaircaseParams {
  int start_level = kDefaultLevels;
  int min_level = kMinLevel;
  int max_level = kDefaultLevels;
  std::size_t discard_reversals = 2;
  std::size_t min_reversals = 4;

  friend bool operator==(const StaircaseParams&, const StaircaseParams&) = default;
};

struct StaircaseStep {
  int level;
  Choice choice;
  friend bool operator==(const StaircaseStep&, const StaircaseStep&) = default;
};

// 1-up/1-down staircase: the reference drops one level after it is preferred
// and rises one level after the standard is preferred.
class Staircase {
 public:
  explicit Staircase(StaircaseParams params = {});

  int current_level() const { return level_; }
  const StaircaseParams& params() const { return params_; }
  std::span<const StaircaseStep> history() const { return history_; }
  // Level of the trial at which the movement direction flipped.
  std::span<const int> reversal_levels() const { return reversals_; }

  // Records `choice` for the trial at current_level() and moves.
  void observe(Choice choice);

  friend bool operator==(const Staircase&, const Staircase&) = default;

 private:
  StaircaseParams params_;
  int level_;
  int last_direction_ = 0;
  std::vector<StaircaseStep> history_;
  std::vector<int> reversals_;
};

// Applies `last_choice` (if any) and returns the level for the next trial.
int staircase_next(Staircase& state, std::optional<Choice> last_choice);

struct StaircaseEstimate {
  double pse = 0.0;
  double spread = 0.0;  // sd of the levels that formed the estimate
  bool from_reversals = false;
};

// Mean of reversal levels after discarding the first ones; falls back to the
// mean level of the last half of trials when reversals are scarce.
StaircaseEstimate staircase_estimate(const Staircase& state);

// Same rule on raw data: the presented levels in order and the reversal
// levels extracted from them.
StaircaseEstimate staircase_estimate(std::span<const int> trial_levels,
                                     std::span<const int> reversal_levels,
                                     const StaircaseParams& params = {});

int random_next(Rng& rng, int min_level = kMinLevel, int max_level = kDefaultLevels);

enum class PolicyKind { Bald, Staircase, Random };

std::string_view to_string(PolicyKind kind) noexcept;
PolicyKind parse_policy_kind(std::string_view text);

struct BaldState {
  ParticlePosterior posterior;
  std::shared_ptr<const BaldTable> table;
};

struct StaircaseState {
  Staircase staircase;
};

// Random probing still keeps a posterior so estimates are comparable to BALD.
struct RandomState {
  ParticlePosterior posterior;
  Rng rng;
};

struct PolicyOptions {
  PolicyKind kind = PolicyKind::Bald;
  int min_level = kMinLevel;
  int max_level = kDefaultLevels;
  LikelihoodModel likelihood{};
  std::size_t n_particles = kDefaultParticles;
  ParticleMode particle_mode = ParticleMode::StratifiedGrid;
  int staircase_start = kDefaultLevels;
};

class Policy {
 public:
  Policy(const PolicyOptions& options, std::uint64_t seed);

  PolicyKind kind() const;
  // Level for the next trial. Random policies consume their stream here.
  int next_level();
  void observe(int level, Choice choice);

  // Null for the staircase.
  const ParticlePosterior* posterior() const;
  // Null unless kind() == Staircase.
  const Staircase* staircase() const;

  const std::variant<BaldState, StaircaseState, RandomState>& state() const {
    return state_;
  }

 private:
  int min_level_;
  int max_level_;
  std::variant<BaldState, StaircaseState, RandomState> state_;
};

}  // namespace apc
