#include "apc/error.hpp"

namespace apc {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ParameterDomain: return "parameter-domain";
    case ErrorCode::Config: return "config";
    case ErrorCode::DegeneratePosterior: return "degenerate-posterior";
    case ErrorCode::NoEstimate: return "no-estimate";
    case ErrorCode::Sequencing: return "sequencing";
    case ErrorCode::SessionComplete: return "session-complete";
    case ErrorCode::State: return "state";
    case ErrorCode::Integrity: return "integrity";
    case ErrorCode::Ingest: return "ingest";
    case ErrorCode::Coverage: return "coverage";
    case ErrorCode::Identifiability: return "identifiability";
    case ErrorCode::UndefinedMetric: return "undefined-metric";
    case ErrorCode::DegenerateScale: return "degenerate-scale";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::FitFailure: return "fit-failure";
    case ErrorCode::Pairing: return "pairing";
    case ErrorCode::UndefinedEffect: return "undefined-effect";
    case ErrorCode::Io: return "io";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::NotFound: return "not-found";
  }
  return "unknown";
}

}  // namespace apc
