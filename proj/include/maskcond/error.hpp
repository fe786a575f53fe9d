#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskcond {

enum class Errc {
  DuplicateCategory,
  EmptyFeatureSet,
  InvalidRange,
  InvalidProbability,
  IndexOutOfRange,
  NonFiniteValue,
  NonFiniteInput,
  SchemaMismatch,
  StepOutOfRange,
  InvalidSchedule,
  InvalidScheduleBounds,
  TimestepOutOfRange,
  ShapeMismatch,
  DivergenceDetected,
  UnknownCategoryLabel,
  MissingColumn,
  MalformedNumber,
  EmptySplit,
  SizeTooLarge,
  CorruptCheckpoint,
  IncompatibleVersion,
  InvalidConfig,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the library; `code()` identifies the failure
/// class and `what()` names the offending feature, row, step or file.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace maskcond
