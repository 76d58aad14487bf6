#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ragmark {

enum class ErrorCode {
  // model parsing
  MalformedXml,
  UnknownTag,
  InvalidValue,
  CycleDetected,
  MissingLabel,
  // physics
  SpawnPenetration,
  RangeViolation,
  NonFiniteState,
  // environments
  NonFiniteObservation,
  NonFiniteAction,
  ShapeMismatch,
  BadState,
  DimensionMismatch,
  EmptyMotion,
  // trainer
  LengthMismatch,
  NonFiniteLoss,
  EmptyEvaluation,
  ConfigError,
  Unsupported,
  // io / cli
  FileNotFound,
  IoError,
  BadCheckpoint,
  UnknownEnv,
  UnknownCommand,
  BadFlag,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ragmark
