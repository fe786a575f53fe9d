#include "maskcond/error.hpp"

namespace maskcond {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::DuplicateCategory: return "DuplicateCategory";
    case Errc::EmptyFeatureSet: return "EmptyFeatureSet";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::InvalidProbability: return "InvalidProbability";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::InvalidSchedule: return "InvalidSchedule";
    case Errc::InvalidScheduleBounds: return "InvalidScheduleBounds";
    case Errc::TimestepOutOfRange: return "TimestepOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::UnknownCategoryLabel: return "UnknownCategoryLabel";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::MalformedNumber: return "MalformedNumber";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::SizeTooLarge: return "SizeTooLarge";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::IncompatibleVersion: return "IncompatibleVersion";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace maskcond
