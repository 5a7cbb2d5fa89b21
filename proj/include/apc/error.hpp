#pragma once

#include <stdexcept>
#include <string>

namespace apc {

enum class ErrorCode {
  ParameterDomain,
  Config,
  DegeneratePosterior,
  NoEstimate,
  Sequencing,
  SessionComplete,
  State,
  Integrity,
  Ingest,
  Coverage,
  Identifiability,
  UndefinedMetric,
  DegenerateScale,
  InsufficientData,
  FitFailure,
  Pairing,
  UndefinedEffect,
  Io,
  Validation,
  NotFound,
};

const char* to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace apc
