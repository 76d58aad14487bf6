#include "ragmark/error.hpp"

namespace ragmark {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedXml: return "MalformedXml";
    case ErrorCode::UnknownTag: return "UnknownTag";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::SpawnPenetration: return "SpawnPenetration";
    case ErrorCode::RangeViolation: return "RangeViolation";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonFiniteObservation: return "NonFiniteObservation";
    case ErrorCode::NonFiniteAction: return "NonFiniteAction";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadState: return "BadState";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyMotion: return "EmptyMotion";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::UnknownEnv: return "UnknownEnv";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::BadFlag: return "BadFlag";
  }
  return "Unknown";
}

}  // namespace ragmark
