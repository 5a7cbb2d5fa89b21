#pragma once

#include <string_view>

#include "apc/rng.hpp"

namespace apc {

enum class Choice { PreferReference, PreferStandard };

std::string_view to_string(Choice c) noexcept;
Choice parse_choice(std::string_view text);

inline constexpr double kDefaultSlope = 2.5;
inline constexpr double kDefaultLapse = 0.02;

// Logistic preference model: probability that the reference at `level` is
// preferred over a standard whose quality sits at `midpoint`. `lapse`
// compresses both asymptotes symmetrically.
struct PsychometricModel {
  double midpoint = 0.0;
  double slope = kDefaultSlope;
  double lapse = kDefaultLapse;

  // Throws ParameterDomain unless slope > 0, 0 <= lapse < 0.5, midpoint finite.
  void validate() const;
};

struct FourParamLogistic {
  double midpoint = 0.0;
  double slope = 1.0;
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
};

// Numerically stable 1 / (1 + exp(-z)).
double sigmoid(double z) noexcept;

double prefer_reference_prob(const PsychometricModel& model, double level);

// Probability of `choice` at `level`. For PreferStandard this evaluates the
// mirrored logistic rather than 1 - p, which keeps precision in the tails.
double choice_likelihood(const PsychometricModel& model, double level,
                         Choice choice);

double eval_four_param(const FourParamLogistic& fit, double level);

// Entropy of a Bernoulli(p) variable in nats, with 0 ln 0 = 0.
double binary_entropy(double p);

Choice simulate_response(const PsychometricModel& model, double level, Rng& rng);

}  // namespace apc
