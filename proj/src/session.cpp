#include "apc/session.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <string>

#include "apc/error.hpp"
#include "apc/rng.hpp"

namespace apc {

std::string_view to_string(PresentationOrder o) noexcept {
  return o == PresentationOrder::ReferenceFirst ? "reference_first" : "standard_first";
}

std::string_view to_string(RaterAnswer a) noexcept {
  return a == RaterAnswer::First ? "first" : "second";
}

std::string_view to_string(SessionStatus s) noexcept {
  return s == SessionStatus::Active ? "active" : "complete";
}

PresentationOrder parse_order(std::string_view text) {
  if (text == "reference_first") return PresentationOrder::ReferenceFirst;
  if (text == "standard_first") return PresentationOrder::StandardFirst;
  fail(ErrorCode::Validation, "unknown presentation order '" + std::string(text) + "'");
}

RaterAnswer parse_answer(std::string_view text) {
  if (text == "first") return RaterAnswer::First;
  if (text == "second") return RaterAnswer::Second;
  fail(ErrorCode::Validation, "choice must be \"first\" or \"second\", got '" +
                                  std::string(text) + "'");
}

Choice resolve_choice(PresentationOrder order, RaterAnswer answer) noexcept {
  const bool reference_first = order == PresentationOrder::ReferenceFirst;
  const bool chose_first = answer == RaterAnswer::First;
  return reference_first == chose_first ? Choice::PreferReference : Choice::PreferStandard;
}

RaterAnswer answer_for(PresentationOrder order, Choice choice) noexcept {
  const bool reference_first = order == PresentationOrder::ReferenceFirst;
  const bool prefer_ref = choice == Choice::PreferReference;
  return reference_first == prefer_ref ? RaterAnswer::First : RaterAnswer::Second;
}

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

void SessionConfig::validate() const {
  if (variants.empty()) fail(ErrorCode::Config, "at least one variant is required");
  if (clips.empty()) fail(ErrorCode::Config, "at least one clip is required");
  if (std::set<std::string>(variants.begin(), variants.end()).size() != variants.size())
    fail(ErrorCode::Config, "variant ids must be unique");
  if (std::set<std::string>(clips.begin(), clips.end()).size() != clips.size())
    fail(ErrorCode::Config, "clip ids must be unique");
  if (trials_per_variant == 0) fail(ErrorCode::Config, "trials_per_variant must be >= 1");
  if (trials_per_variant > clips.size())
    fail(ErrorCode::Config, "trials_per_variant (" + std::to_string(trials_per_variant) +
                                ") exceeds the number of clips (" +
                                std::to_string(clips.size()) + ")");
  if (scale_levels < 2) fail(ErrorCode::Config, "scale_levels must be >= 2");
  if (n_particles < 2) fail(ErrorCode::Config, "n_particles must be >= 2");
  if (staircase_start < 0 || staircase_start > scale_levels)
    fail(ErrorCode::Config, "staircase_start outside the scale");
  try {
    PsychometricModel{0.0, slope, lapse}.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

PolicyOptions SessionConfig::policy_options() const {
  PolicyOptions opts;
  opts.kind = policy;
  opts.min_level = kMinLevel;
  opts.max_level = scale_levels;
  opts.likelihood = {slope, lapse};
  opts.n_particles = n_particles;
  opts.particle_mode = particle_mode;
  opts.staircase_start = staircase_start == 0 ? scale_levels : staircase_start;
  return opts;
}

namespace {

constexpr std::uint64_t kScheduleStream = 0;
constexpr std::uint64_t kPolicyStreamBase = 1000;

std::vector<ScheduledTrial> build_schedule(const SessionConfig& config) {
  Rng rng(derive_seed(config.seed, kScheduleStream));
  std::vector<ScheduledTrial> slots;
  slots.reserve(config.total_trials());
  for (std::size_t v = 0; v < config.variants.size(); ++v) {
    std::vector<std::string> clips = config.clips;
    rng.shuffle(std::span(clips));
    for (std::size_t k = 0; k < config.trials_per_variant; ++k)
      slots.push_back({v, clips[k], PresentationOrder::ReferenceFirst});
  }
  rng.shuffle(std::span(slots));
  for (auto& slot : slots)
    slot.order = rng.bernoulli(0.5) ? PresentationOrder::ReferenceFirst
                                    : PresentationOrder::StandardFirst;
  return slots;
}

}  // namespace

Session::Session(SessionConfig config) : config_(std::move(config)) {
  config_.validate();
  schedule_ = build_schedule(config_);
  const auto opts = config_.policy_options();
  policies_.reserve(config_.variants.size());
  for (std::size_t v = 0; v < config_.variants.size(); ++v)
    policies_.emplace_back(opts, derive_seed(config_.seed, kPolicyStreamBase + v));
  trials_done_.assign(config_.variants.size(), 0);
}

SessionStatus Session::status() const {
  return log_.size() == schedule_.size() ? SessionStatus::Complete : SessionStatus::Active;
}

TrialPlan Session::next_trial() {
  if (status() == SessionStatus::Complete)
    fail(ErrorCode::SessionComplete, "session is complete");
  if (pending_) return *pending_;
  const auto& slot = schedule_[cursor()];
  TrialPlan plan;
  plan.trial_index = cursor();
  plan.variant = config_.variants[slot.variant_index];
  plan.clip = slot.clip;
  plan.reference_level = policies_[slot.variant_index].next_level();
  plan.order = slot.order;
  pending_ = plan;
  return plan;
}

void Session::record_response(std::size_t trial_index, RaterAnswer answer,
                              std::int64_t timestamp_ms) {
  if (status() == SessionStatus::Complete)
    fail(ErrorCode::State, "session is already complete");
  if (trial_index != cursor())
    fail(ErrorCode::Sequencing, "response for trial " + std::to_string(trial_index) +
                                    " but the outstanding trial is " +
                                    std::to_string(cursor()));
  if (!pending_)
    fail(ErrorCode::Sequencing,
         "trial " + std::to_string(trial_index) + " has not been presented yet");
  const TrialPlan plan = *pending_;
  const Choice choice = resolve_choice(plan.order, answer);
  const std::size_t v = schedule_[cursor()].variant_index;
  policies_[v].observe(plan.reference_level, choice);
  ++trials_done_[v];
  log_.push_back({plan, answer, choice, timestamp_ms});
  pending_.reset();
}

std::size_t Session::variant_index(std::string_view variant) const {
  const auto it = std::find(config_.variants.begin(), config_.variants.end(), variant);
  if (it == config_.variants.end())
    fail(ErrorCode::NotFound, "unknown variant '" + std::string(variant) + "'");
  return static_cast<std::size_t>(it - config_.variants.begin());
}

const Policy& Session::policy(std::string_view variant) const {
  return policies_[variant_index(variant)];
}

std::size_t Session::trials_for(std::string_view variant) const {
  return trials_done_[variant_index(variant)];
}

QualityEstimate Session::estimate(std::string_view variant) const {
  const std::size_t v = variant_index(variant);
  QualityEstimate est;
  est.variant = config_.variants[v];
  est.n_trials = trials_done_[v];
  const Policy& policy = policies_[v];
  if (const auto* post = policy.posterior()) {
    est.pse = post->mean();
    est.uncertainty = post->sd();
    est.method = policy.kind() == PolicyKind::Bald ? "bald-posterior" : "random-posterior";
    return est;
  }
  const auto stair = staircase_estimate(*policy.staircase());
  est.pse = stair.pse;
  est.uncertainty = stair.spread;
  est.method = stair.from_reversals ? "staircase-reversals" : "staircase-last-half";
  return est;
}

std::vector<QualityEstimate> Session::estimates() const {
  std::vector<QualityEstimate> out;
  for (const auto& variant : config_.variants) {
    if (trials_for(variant) == 0 && policy(variant).kind() == PolicyKind::Staircase) {
      out.push_back({variant, std::nullopt, std::nullopt, 0, "staircase"});
    } else {
      out.push_back(estimate(variant));
    }
  }
  return out;
}

Session replay(std::span<const TrialRecord> log, const SessionConfig& config) {
  Session session(config);
  for (std::size_t i = 0; i < log.size(); ++i) {
    const TrialRecord& rec = log[i];
    if (rec.plan.trial_index != i)
      fail(ErrorCode::Integrity, "trial " + std::to_string(i) + ": record carries index " +
                                     std::to_string(rec.plan.trial_index));
    if (session.status() == SessionStatus::Complete)
      fail(ErrorCode::Integrity,
           "trial " + std::to_string(i) + ": log is longer than the session");
    const TrialPlan expect = session.next_trial();
    if (expect != rec.plan) {
      std::string what = "trial " + std::to_string(i) + ": ";
      if (expect.reference_level != rec.plan.reference_level)
        what += "logged level " + std::to_string(rec.plan.reference_level) +
                " but policy selects " + std::to_string(expect.reference_level);
      else
        what += "logged schedule entry differs from the seeded schedule";
      fail(ErrorCode::Integrity, what);
    }
    if (resolve_choice(rec.plan.order, rec.answer) != rec.choice)
      fail(ErrorCode::Integrity,
           "trial " + std::to_string(i) + ": choice does not match answer and order");
    session.record_response(i, rec.answer, rec.timestamp_ms);
  }
  return session;
}

}  // namespace apc
