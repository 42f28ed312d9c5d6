#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tabncd {

// Error codes are part of the wire contract (HTTP bodies, CLI diagnostics).
enum class ErrorCode {
  RaggedInput,
  EmptyInput,
  MissingValue,
  DuplicateColumn,
  UnknownColumn,
  UnknownDataset,
  InvalidPartition,
  UnknownHead,
  ShapeError,
  DivergedError,
  TooFewRows,
  BadPerplexity,
  StaleResult,
  BadConfig,
  UnknownJob,
  Cancelled,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::RaggedInput: return "RaggedInput";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingValue: return "MissingValue";
    case ErrorCode::DuplicateColumn: return "DuplicateColumn";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
    case ErrorCode::InvalidPartition: return "InvalidPartition";
    case ErrorCode::UnknownHead: return "UnknownHead";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::DivergedError: return "DivergedError";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::BadPerplexity: return "BadPerplexity";
    case ErrorCode::StaleResult: return "StaleResult";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::UnknownJob: return "UnknownJob";
    case ErrorCode::Cancelled: return "Cancelled";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace tabncd
