#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apc/policy.hpp"
#include "apc/psychometric.hpp"

namespace apc {

enum class PresentationOrder { ReferenceFirst, StandardFirst };
enum class RaterAnswer { First, Second };
enum class SessionStatus { Active, Complete };

std::string_view to_string(PresentationOrder o) noexcept;
std::string_view to_string(RaterAnswer a) noexcept;
std::string_view to_string(SessionStatus s) noexcept;
PresentationOrder parse_order(std::string_view text);
RaterAnswer parse_answer(std::string_view text);

// Maps the rater's first/second answer onto a preference via the order.
Choice resolve_choice(PresentationOrder order, RaterAnswer answer) noexcept;
RaterAnswer answer_for(PresentationOrder order, Choice choice) noexcept;

struct SessionConfig {
  std::vector<std::string> variants;
  std::vector<std::string> clips;
  std::size_t trials_per_variant = 30;
  int scale_levels = kDefaultLevels;
  PolicyKind policy = PolicyKind::Bald;
  double slope = kDefaultSlope;
  double lapse = kDefaultLapse;
  std::uint64_t seed = 0;
  std::size_t n_particles = kDefaultParticles;
  ParticleMode particle_mode = ParticleMode::StratifiedGrid;
  // 0 means start at the top of the scale.
  int staircase_start = 0;

  void validate() const;
  std::size_t total_trials() const { return variants.size() * trials_per_variant; }
  PolicyOptions policy_options() const;

  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

struct ScheduledTrial {
  std::size_t variant_index;
  std::string clip;
  PresentationOrder order;

  friend bool operator==(const ScheduledTrial&, const ScheduledTrial&) = default;
};

struct TrialPlan {
  std::size_t trial_index = 0;
  std::string variant;
  std::string clip;
  int reference_level = 0;
  PresentationOrder order = PresentationOrder::ReferenceFirst;

  friend bool operator==(const TrialPlan&, const TrialPlan&) = default;
};

struct TrialRecord {
  TrialPlan plan;
  RaterAnswer answer = RaterAnswer::First;
  Choice choice = Choice::PreferReference;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct QualityEstimate {
  std::string variant;
  // Empty when no estimate exists yet (a staircase before its first trial).
  std::optional<double> pse;
  std::optional<double> uncertainty;
  std::size_t n_trials = 0;
  std::string method;

  friend bool operator==(const QualityEstimate&, const QualityEstimate&) = default;
};

std::int64_t now_ms();

// One rater's adaptive session. The (variant, clip, order) schedule is fixed
// from the seed at creation; reference levels are chosen by each variant's
// policy when a trial is requested. Not thread-safe: callers serialize.
class Session {
 public:
  explicit Session(SessionConfig config);

  const SessionConfig& config() const { return config_; }
  std::span<const ScheduledTrial> schedule() const { return schedule_; }
  std::span<const TrialRecord> log() const { return log_; }
  std::size_t cursor() const { return log_.size(); }
  std::size_t total_trials() const { return schedule_.size(); }
  SessionStatus status() const;
  const std::optional<TrialPlan>& pending() const { return pending_; }

  // Plan for the trial at the cursor. Repeated calls return the same plan
  // until a response is recorded. Throws SessionComplete when done.
  TrialPlan next_trial();

  void record_response(std::size_t trial_index, RaterAnswer answer,
                       std::int64_t timestamp_ms = now_ms());

  // Posterior mean/sd for BALD and random; reversal rule for the staircase.
  QualityEstimate estimate(std::string_view variant) const;
  std::vector<QualityEstimate> estimates() const;

  const Policy& policy(std::string_view variant) const;
  std::size_t trials_for(std::string_view variant) const;

 private:
  std::size_t variant_index(std::string_view variant) const;

  SessionConfig config_;
  std::vector<ScheduledTrial> schedule_;
  std::vector<Policy> policies_;
  std::vector<std::size_t> trials_done_;
  std::vector<TrialRecord> log_;
  std::optional<TrialPlan> pending_;
};

inline Session create_session(SessionConfig config) { return Session(std::move(config)); }

// Rebuilds a session from its trial records. Each record's plan must match
// what the reconstructed policies produce; the first mismatch raises
// Integrity naming the trial index.
Session replay(std::span<const TrialRecord> log, const SessionConfig& config);

}  // namespace apc
