#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zs6d {

enum class ErrorCode {
  NonPositiveDepth,
  DegenerateView,
  ParseError,
  UnsupportedFormat,
  OutOfBounds,
  InvalidMesh,
  IoError,
  BadMagic,
  UnsupportedVersion,
  TruncatedPayload,
  EmptyBbox,
  NoForeground,
  DimMismatch,
  EmptyAfterFiltering,
  DegenerateConfiguration,
  NoValidSolution,
  TooFewCorrespondences,
  NoConsensus,
  MissingFile,
  SchemaError,
  EmptyReportSet,
  ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateView: return "DegenerateView";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::InvalidMesh: return "InvalidMesh";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::EmptyBbox: return "EmptyBbox";
    case ErrorCode::NoForeground: return "NoForeground";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoValidSolution: return "NoValidSolution";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::EmptyReportSet: return "EmptyReportSet";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message is prefixed with the code name so logs stay greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace zs6d
