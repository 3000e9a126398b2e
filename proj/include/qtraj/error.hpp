#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qtraj {

/// Failure categories raised by the library. Each maps onto one of the
/// error kinds named in the operation contracts.
enum class ErrorCode {
  invalid_truncation,
  shape,
  truncation_inadequate,
  invalid_argument,
  step_too_large,
  integration_unstable,
  record_undefined,
  underflow,
  misaligned_grid,
  above_threshold,
  straddling_resonance,
  gain_guard,
  fit_failed,
  invalid_config,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_truncation: return "invalid-truncation";
    case ErrorCode::shape: return "shape";
    case ErrorCode::truncation_inadequate: return "truncation-inadequate";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::step_too_large: return "step-too-large";
    case ErrorCode::integration_unstable: return "integration-unstable";
    case ErrorCode::record_undefined: return "record-undefined";
    case ErrorCode::underflow: return "underflow";
    case ErrorCode::misaligned_grid: return "misaligned-grid";
    case ErrorCode::above_threshold: return "above-threshold";
    case ErrorCode::straddling_resonance: return "straddling-resonance";
    case ErrorCode::gain_guard: return "gain-guard";
    case ErrorCode::fit_failed: return "fit-failed";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the trajectory loop; carries the step at which integration failed.
class StepError : public Error {
 public:
  StepError(ErrorCode code, std::size_t step, const std::string& what)
      : Error(code, "step " + std::to_string(step) + ": " + what), step_(step) {}

  [[nodiscard]] std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace qtraj
