#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

namespace maskcond {

enum class ScheduleKind { Constant, Linear, Step, Exponential };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Masking probability as a function of the gradient-update index t in [0, T].
struct SparsitySchedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double p_start = 0.0;
  double p_end = 0.0;  // unused by Constant
  std::size_t segments = 1;  // Step only
  std::size_t total_steps = 1;

  static SparsitySchedule constant(double p, std::size_t total_steps = 1);
  static SparsitySchedule linear(double p_start, double p_end, std::size_t total_steps);
  static SparsitySchedule step(double p_start, double p_end, std::size_t segments, std::size_t total_steps);
  static SparsitySchedule exponential(double p_start, double p_end, std::size_t total_steps);

  /// Copy with a different horizon T.
  SparsitySchedule with_total_steps(std::size_t total_steps) const;

  bool operator==(const SparsitySchedule&) const = default;
};

/// Throws InvalidSchedule when probabilities leave [0, 1] or N, T are zero.
void validate_schedule(const SparsitySchedule& s);

/// Throws StepOutOfRange if t > T.
double sparsity_at(const SparsitySchedule& s, std::size_t t);

/// Index of the Step segment containing t, in [1, N].
std::size_t step_segment(const SparsitySchedule& s, std::size_t t);

/// `{"kind": "exponential", "p_start": 0.1, "p_end": 0.25, "segments": 5}`;
/// T is not part of the fragment and must be supplied by the training plan.
SparsitySchedule schedule_from_json(const nlohmann::json& j, std::size_t total_steps = 1);
nlohmann::json schedule_to_json(const SparsitySchedule& s);

}  // namespace maskcond
