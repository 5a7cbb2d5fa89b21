#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "apc/psychometric.hpp"
#include "apc/rng.hpp"

namespace apc {

enum class ParticleMode { StratifiedGrid, Random };

std::string_view to_string(ParticleMode m) noexcept;
ParticleMode parse_particle_mode(std::string_view text);

inline constexpr std::size_t kDefaultParticles = 225;

// Slope and lapse shared by every particle; each particle supplies a midpoint.
struct LikelihoodModel {
  double slope = kDefaultSlope;
  double lapse = kDefaultLapse;

  PsychometricModel at(double midpoint) const { return {midpoint, slope, lapse}; }

  friend bool operator==(const LikelihoodModel&, const LikelihoodModel&) = default;
};

// Importance-weighted grid over the psychometric midpoint. Positions are fixed
// at construction; observations only reweight them.
class ParticlePosterior {
 public:
  ParticlePosterior(std::vector<double> particles, std::vector<double> weights,
                    LikelihoodModel model);

  static ParticlePosterior uniform(double scale_min, double scale_max,
                                   std::size_t n_particles, ParticleMode mode,
                                   LikelihoodModel model, Rng* rng = nullptr);

  std::span<const double> particles() const { return particles_; }
  std::span<const double> weights() const { return weights_; }
  const LikelihoodModel& model() const { return model_; }
  std::size_t size() const { return particles_.size(); }

  // Multiplies each weight by the likelihood of `choice` at `level` and
  // renormalizes. If every weight would vanish the posterior is left as it
  // was, degenerate() becomes true, and DegeneratePosterior is thrown.
  void update(double level, Choice choice);

  bool degenerate() const { return degenerate_; }

  double mean() const;
  double sd() const;
  // Central interval over the sorted particles holding at least `mass`.
  std::pair<double, double> credible_interval(double mass) const;

  friend bool operator==(const ParticlePosterior&, const ParticlePosterior&) = default;

 private:
  std::vector<double> particles_;
  std::vector<double> weights_;
  LikelihoodModel model_;
  bool degenerate_ = false;
};

ParticlePosterior init_posterior(double scale_min, double scale_max,
                                 std::size_t n_particles, ParticleMode mode,
                                 LikelihoodModel model, Rng* rng = nullptr);

// Value-returning form of ParticlePosterior::update.
ParticlePosterior updated(ParticlePosterior posterior, double level, Choice choice);

}  // namespace apc
