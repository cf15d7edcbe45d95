#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tbi {

// Machine-readable failure categories. The CLI reports these verbatim.
enum class ErrorCode {
  Domain,
  Validation,
  Search,
  Fit,
  Calibration,
  Constraint,
  InsufficientData,
  GridEmpty,
  Config,
  MalformedCsv,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Domain: return "DOMAIN_ERROR";
    case ErrorCode::Validation: return "VALIDATION_ERROR";
    case ErrorCode::Search: return "SEARCH_FAILED";
    case ErrorCode::Fit: return "FIT_FAILED";
    case ErrorCode::Calibration: return "CALIBRATION_FAILED";
    case ErrorCode::Constraint: return "CONSTRAINT_INFEASIBLE";
    case ErrorCode::InsufficientData: return "INSUFFICIENT_DATA";
    case ErrorCode::GridEmpty: return "GRID_EMPTY";
    case ErrorCode::Config: return "CONFIG_INVALID";
    case ErrorCode::MalformedCsv: return "MALFORMED_CSV";
    case ErrorCode::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorCode::Domain, what) {}
  DomainError(ErrorCode code, const std::string& what) : Error(code, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCode::Validation, what) {}
};

class SearchError : public Error {
 public:
  explicit SearchError(const std::string& what) : Error(ErrorCode::Search, what) {}
};

class FitError : public Error {
 public:
  explicit FitError(const std::string& what) : Error(ErrorCode::Fit, what) {}
};

class CalibrationError : public Error {
 public:
  explicit CalibrationError(const std::string& what) : Error(ErrorCode::Calibration, what) {}
};

class ConstraintError : public Error {
 public:
  explicit ConstraintError(const std::string& what) : Error(ErrorCode::Constraint, what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what)
      : Error(ErrorCode::InsufficientData, what) {}
};

}  // namespace tbi
