#pragma once

#include <stdexcept>
#include <string>

namespace seg {

enum class ErrorKind {
  InvalidShape,
  InvalidInput,
  InvalidLabel,
  Config,
  EmptyData,
  EmptyInput,
  EmptySelection,
  EmptyEvaluation,
  CheckpointIncompatible,
  TrainingDiverged,
  Numeric,
  Io,
  Usage,
};

const char* error_kind_name(ErrorKind kind);

/// Domain error carrying a stable machine-readable kind alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  const char* kind_name() const { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) raise(kind, message);
}

}  // namespace seg
