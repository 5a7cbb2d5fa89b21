#include "apc/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "apc/error.hpp"

namespace apc {

std::string_view to_string(ParticleMode m) noexcept {
  return m == ParticleMode::StratifiedGrid ? "grid" : "random";
}

ParticleMode parse_particle_mode(std::string_view text) {
  if (text == "grid") return ParticleMode::StratifiedGrid;
  if (text == "random") return ParticleMode::Random;
  fail(ErrorCode::Config, "particle mode must be grid or random, got '" + std::string(text) + "'");
}

namespace {

constexpr double kNormTolerance = 1e-9;

}  // namespace

ParticlePosterior::ParticlePosterior(std::vector<double> particles,
                                     std::vector<double> weights,
                                     LikelihoodModel model)
    : particles_(std::move(particles)), weights_(std::move(weights)), model_(model) {
  model_.at(0.0).validate();
  if (particles_.empty() || particles_.size() != weights_.size())
    fail(ErrorCode::Config, "particles and weights must be nonempty and the same length");
  double total = 0.0;
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    if (!std::isfinite(particles_[i]))
      fail(ErrorCode::Config, "particle positions must be finite");
    if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i]))
      fail(ErrorCode::Config, "particle weights must be finite and nonnegative");
    total += weights_[i];
  }
  if (std::abs(total - 1.0) > kNormTolerance)
    fail(ErrorCode::Config, "particle weights must sum to 1");
}

ParticlePosterior ParticlePosterior::uniform(double scale_min, double scale_max,
                                             std::size_t n_particles,
                                             ParticleMode mode,
                                             LikelihoodModel model, Rng* rng) {
  if (n_particles < 2) fail(ErrorCode::Config, "need at least 2 particles");
  if (!(scale_min < scale_max))
    fail(ErrorCode::Config, "scale_min must be below scale_max");
  std::vector<double> particles(n_particles);
  const double width = scale_max - scale_min;
  const double n = static_cast<double>(n_particles);
  if (mode == ParticleMode::StratifiedGrid) {
    for (std::size_t i = 0; i < n_particles; ++i)
      particles[i] = scale_min + (static_cast<double>(i) + 0.5) * width / n;
  } else {
    if (rng == nullptr) fail(ErrorCode::Config, "random particle mode needs a random stream");
    for (auto& p : particles) p = rng->uniform(scale_min, scale_max);
  }
  std::vector<double> weights(n_particles, 1.0 / n);
  return ParticlePosterior(std::move(particles), std::move(weights), model);
}

void ParticlePosterior::update(double level, Choice choice) {
  if (!std::isfinite(level)) fail(ErrorCode::ParameterDomain, "level must be finite");
  std::vector<double> next(weights_.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    next[i] = weights_[i] * choice_likelihood(model_.at(particles_[i]), level, choice);
    total += next[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    degenerate_ = true;
    fail(ErrorCode::DegeneratePosterior,
         "observation at level " + std::to_string(level) +
             " removed all posterior mass");
  }
  for (auto& w : next) w /= total;
  weights_ = std::move(next);
}

double ParticlePosterior::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < particles_.size(); ++i) m += weights_[i] * particles_[i];
  return m;
}

double ParticlePosterior::sd() const {
  const double m = mean();
  double v = 0.0;
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    const double d = particles_[i] - m;
    v += weights_[i] * d * d;
  }
  return std::sqrt(std::max(v, 0.0));
}

std::pair<double, double> ParticlePosterior::credible_interval(double mass) const {
  if (!(mass > 0.0 && mass < 1.0))
    fail(ErrorCode::ParameterDomain, "credible mass must lie in (0, 1)");
  std::vector<std::size_t> order(particles_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return particles_[a] < particles_[b];
  });
  const double tail = 0.5 * (1.0 - mass);
  double lo = particles_[order.front()];
  double hi = particles_[order.back()];
  bool have_lo = false;
  double cum = 0.0;
  for (std::size_t idx : order) {
    cum += weights_[idx];
    if (!have_lo && cum >= tail && weights_[idx] > 0.0) {
      lo = particles_[idx];
      have_lo = true;
    }
    if (cum >= 1.0 - tail - 1e-15 && weights_[idx] > 0.0) {
      hi = particles_[idx];
      break;
    }
  }
  return {lo, hi};
}

ParticlePosterior init_posterior(double scale_min, double scale_max,
                                 std::size_t n_particles, ParticleMode mode,
                                 LikelihoodModel model, Rng* rng) {
  return ParticlePosterior::uniform(scale_min, scale_max, n_particles, mode, model, rng);
}

ParticlePosterior updated(ParticlePosterior posterior, double level, Choice choice) {
  posterior.update(level, choice);
  return posterior;
}

}  // namespace apc
