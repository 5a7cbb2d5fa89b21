#include "apc/psychometric.hpp"

#include <cmath>
#include <string>

#include "apc/error.hpp"

namespace apc {

std::string_view to_string(Choice c) noexcept {
  return c == Choice::PreferReference ? "reference" : "standard";
}

Choice parse_choice(std::string_view text) {
  if (text == "reference" || text == "prefer_reference" || text == "ref")
    return Choice::PreferReference;
  if (text == "standard" || text == "prefer_standard" || text == "std")
    return Choice::PreferStandard;
  fail(ErrorCode::Validation, "unknown choice '" + std::string(text) + "'");
}

void PsychometricModel::validate() const {
  if (!std::isfinite(midpoint))
    fail(ErrorCode::ParameterDomain, "psychometric midpoint must be finite");
  if (!(slope > 0.0) || !std::isfinite(slope))
    fail(ErrorCode::ParameterDomain, "psychometric slope must be > 0");
  if (!(lapse >= 0.0 && lapse < 0.5))
    fail(ErrorCode::ParameterDomain, "lapse must lie in [0, 0.5)");
}

void FourParamLogistic::validate() const {
  if (!std::isfinite(midpoint))
    fail(ErrorCode::ParameterDomain, "logistic midpoint must be finite");
  if (!(slope > 0.0) || !std::isfinite(slope))
    fail(ErrorCode::ParameterDomain, "logistic slope must be > 0");
  if (!(lower < upper))
    fail(ErrorCode::ParameterDomain, "logistic lower asymptote must be below upper");
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double prefer_reference_prob(const PsychometricModel& model, double level) {
  model.validate();
  return model.lapse +
         (1.0 - 2.0 * model.lapse) * sigmoid((level - model.midpoint) / model.slope);
}

double choice_likelihood(const PsychometricModel& model, double level,
                         Choice choice) {
  model.validate();
  const double z = (level - model.midpoint) / model.slope;
  const double s = choice == Choice::PreferReference ? sigmoid(z) : sigmoid(-z);
  return model.lapse + (1.0 - 2.0 * model.lapse) * s;
}

double eval_four_param(const FourParamLogistic& fit, double level) {
  fit.validate();
  return fit.lower +
         (fit.upper - fit.lower) * sigmoid((level - fit.midpoint) / fit.slope);
}

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0))
    fail(ErrorCode::ParameterDomain, "entropy argument outside [0, 1]");
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

Choice simulate_response(const PsychometricModel& model, double level, Rng& rng) {
  const double p = prefer_reference_prob(model, level);
  return rng.bernoulli(p) ? Choice::PreferReference : Choice::PreferStandard;
}

}  // namespace apc
