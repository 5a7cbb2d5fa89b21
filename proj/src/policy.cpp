#include "apc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "apc/error.hpp"

namespace apc {

BaldTable::BaldTable(const ParticlePosterior& posterior,
                     std::span<const double> levels)
    : levels_(levels.begin(), levels.end()), n_particles_(posterior.size()) {
  if (levels_.empty()) fail(ErrorCode::Config, "no candidate levels");
  prob_.resize(levels_.size() * n_particles_);
  entropy_.resize(prob_.size());
  const auto particles = posterior.particles();
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    for (std::size_t i = 0; i < n_particles_; ++i) {
      const double p =
          prefer_reference_prob(posterior.model().at(particles[i]), levels_[l]);
      prob_[l * n_particles_ + i] = p;
      entropy_[l * n_particles_ + i] = binary_entropy(p);
    }
  }
}

std::vector<double> BaldTable::acquisition(std::span<const double> weights) const {
  if (weights.size() != n_particles_)
    fail(ErrorCode::Config, "weight vector does not match the particle table");
  std::vector<double> out(levels_.size());
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const double* p = &prob_[l * n_particles_];
    const double* h = &entropy_[l * n_particles_];
    double mean_p = 0.0;
    double mean_h = 0.0;
    for (std::size_t i = 0; i < n_particles_; ++i) {
      mean_p += weights[i] * p[i];
      mean_h += weights[i] * h[i];
    }
    const double info = binary_entropy(std::clamp(mean_p, 0.0, 1.0)) - mean_h;
    out[l] = std::clamp(info, 0.0, std::numbers::ln2);
  }
  return out;
}

std::vector<double> bald_acquisition(const ParticlePosterior& posterior,
                                     std::span<const double> candidate_levels) {
  return BaldTable(posterior, candidate_levels).acquisition(posterior.weights());
}

std::size_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::Config, "argmax of an empty range");
  const double best = *std::max_element(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] >= best - kAcquisitionTieTolerance) return i;
  return 0;
}

namespace {

std::vector<double> level_range(int min_level, int max_level) {
  if (min_level > max_level) fail(ErrorCode::Config, "empty level range");
  std::vector<double> levels(static_cast<std::size_t>(max_level - min_level + 1));
  std::iota(levels.begin(), levels.end(), static_cast<double>(min_level));
  return levels;
}

}  // namespace

int select_next_bald(const ParticlePosterior& posterior, int min_level, int max_level) {
  const auto levels = level_range(min_level, max_level);
  const auto info = bald_acquisition(posterior, levels);
  return min_level + static_cast<int>(argmax_lowest(info));
}

Staircase::Staircase(StaircaseParams params) : params_(params), level_(params.start_level) {
  if (params_.min_level > params_.max_level)
    fail(ErrorCode::Config, "staircase level range is empty");
  if (level_ < params_.min_level || level_ > params_.max_level)
    fail(ErrorCode::Config, "staircase start level outside the scale");
}

void Staircase::observe(Choice choice) {
  const int direction = choice == Choice::PreferReference ? -1 : +1;
  history_.push_back({level_, choice});
  if (last_direction_ != 0 && direction != last_direction_) reversals_.push_back(level_);
  last_direction_ = direction;
  level_ = std::clamp(level_ + direction, params_.min_level, params_.max_level);
}

int staircase_next(Staircase& state, std::optional<Choice> last_choice) {
  if (last_choice) state.observe(*last_choice);
  return state.current_level();
}

namespace {

StaircaseEstimate mean_and_sd(std::span<const int> values, bool from_reversals) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (int v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (int v : values) ss += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {mean, sd, from_reversals};
}

}  // namespace

StaircaseEstimate staircase_estimate(std::span<const int> trial_levels,
                                     std::span<const int> reversal_levels,
                                     const StaircaseParams& params) {
  if (trial_levels.empty()) fail(ErrorCode::NoEstimate, "staircase has no trials");
  if (reversal_levels.size() >= params.min_reversals &&
      reversal_levels.size() > params.discard_reversals) {
    return mean_and_sd(reversal_levels.subspan(params.discard_reversals), true);
  }
  const std::size_t keep = (trial_levels.size() + 1) / 2;
  return mean_and_sd(trial_levels.subspan(trial_levels.size() - keep), false);
}

StaircaseEstimate staircase_estimate(const Staircase& state) {
  std::vector<int> levels;
  levels.reserve(state.history().size());
  for (const auto& step : state.history()) levels.push_back(step.level);
  return staircase_estimate(levels, state.reversal_levels(), state.params());
}

int random_next(Rng& rng, int min_level, int max_level) {
  if (min_level > max_level) fail(ErrorCode::Config, "empty level range");
  return static_cast<int>(rng.uniform_int(min_level, max_level));
}

std::string_view to_string(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::Bald: return "bald";
    case PolicyKind::Staircase: return "staircase";
    case PolicyKind::Random: return "random";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(std::string_view text) {
  if (text == "bald") return PolicyKind::Bald;
  if (text == "staircase") return PolicyKind::Staircase;
  if (text == "random") return PolicyKind::Random;
  fail(ErrorCode::Config, "unknown policy '" + std::string(text) + "'");
}

namespace {

ParticlePosterior make_prior(const PolicyOptions& options, Rng& rng) {
  return ParticlePosterior::uniform(options.min_level, options.max_level,
                                    options.n_particles, options.particle_mode,
                                    options.likelihood, &rng);
}

}  // namespace

Policy::Policy(const PolicyOptions& options, std::uint64_t seed)
    : min_level_(options.min_level),
      max_level_(options.max_level),
      state_(StaircaseState{Staircase(StaircaseParams{
          std::clamp(options.staircase_start, options.min_level, options.max_level),
          options.min_level, options.max_level})}) {
  Rng prior_rng(derive_seed(seed, 1));
  switch (options.kind) {
    case PolicyKind::Bald: {
      auto prior = make_prior(options, prior_rng);
      auto table = std::make_shared<const BaldTable>(
          prior, level_range(options.min_level, options.max_level));
      state_ = BaldState{std::move(prior), std::move(table)};
      break;
    }
    case PolicyKind::Random:
      state_ = RandomState{make_prior(options, prior_rng), Rng(derive_seed(seed, 2))};
      break;
    case PolicyKind::Staircase:
      if (options.staircase_start < options.min_level ||
          options.staircase_start > options.max_level)
        fail(ErrorCode::Config, "staircase start level outside the scale");
      break;
  }
}

PolicyKind Policy::kind() const {
  return static_cast<PolicyKind>(state_.index());
}

int Policy::next_level() {
  if (auto* bald = std::get_if<BaldState>(&state_)) {
    const auto info = bald->table->acquisition(bald->posterior.weights());
    return min_level_ + static_cast<int>(argmax_lowest(info));
  }
  if (auto* stair = std::get_if<StaircaseState>(&state_))
    return stair->staircase.current_level();
  auto& random = std::get<RandomState>(state_);
  return random_next(random.rng, min_level_, max_level_);
}

void Policy::observe(int level, Choice choice) {
  if (auto* bald = std::get_if<BaldState>(&state_)) {
    bald->posterior.update(level, choice);
  } else if (auto* stair = std::get_if<StaircaseState>(&state_)) {
    if (stair->staircase.current_level() != level)
      fail(ErrorCode::Integrity, "staircase observed level " + std::to_string(level) +
                                     " but expected " +
                                     std::to_string(stair->staircase.current_level()));
    stair->staircase.observe(choice);
  } else {
    std::get<RandomState>(state_).posterior.update(level, choice);
  }
}

const ParticlePosterior* Policy::posterior() const {
  if (auto* bald = std::get_if<BaldState>(&state_)) return &bald->posterior;
  if (auto* random = std::get_if<RandomState>(&state_)) return &random->posterior;
  return nullptr;
}

const Staircase* Policy::staircase() const {
  if (auto* stair = std::get_if<StaircaseState>(&state_)) return &stair->staircase;
  return nullptr;
}

}  // namespace apc
