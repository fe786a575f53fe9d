#include "maskcond/schedules.hpp"

#include <algorithm>
#include <cmath>

#include "maskcond/error.hpp"

namespace maskcond {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Step: return "step";
    case ScheduleKind::Exponential: return "exponential";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "constant") return ScheduleKind::Constant;
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "step" || name == "stepwise") return ScheduleKind::Step;
  if (name == "exponential") return ScheduleKind::Exponential;
  throw Error(Errc::InvalidSchedule, "unknown schedule kind '" + name + "'");
}

SparsitySchedule SparsitySchedule::constant(double p, std::size_t total_steps) {
  return {ScheduleKind::Constant, p, p, 1, total_steps};
}

SparsitySchedule SparsitySchedule::linear(double p_start, double p_end, std::size_t total_steps) {
  return {ScheduleKind::Linear, p_start, p_end, 1, total_steps};
}

SparsitySchedule SparsitySchedule::step(double p_start, double p_end, std::size_t segments, std::size_t total_steps) {
  return {ScheduleKind::Step, p_start, p_end, segments, total_steps};
}

SparsitySchedule SparsitySchedule::exponential(double p_start, double p_end, std::size_t total_steps) {
  return {ScheduleKind::Exponential, p_start, p_end, 1, total_steps};
}

SparsitySchedule SparsitySchedule::with_total_steps(std::size_t total_steps) const {
  SparsitySchedule s = *this;
  s.total_steps = total_steps;
  return s;
}

void validate_schedule(const SparsitySchedule& s) {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(s.p_start)) throw Error(Errc::InvalidSchedule, "p_start outside [0, 1]");
  if (s.kind != ScheduleKind::Constant && !in_unit(s.p_end)) throw Error(Errc::InvalidSchedule, "p_end outside [0, 1]");
  if (s.segments == 0) throw Error(Errc::InvalidSchedule, "step schedule needs at least one segment");
  if (s.total_steps == 0) throw Error(Errc::InvalidSchedule, "total_steps must be positive");
}

std::size_t step_segment(const SparsitySchedule& s, std::size_t t) {
  if (t > s.total_steps) {
    throw Error(Errc::StepOutOfRange, "t = " + std::to_string(t) + " beyond T = " + std::to_string(s.total_steps));
  }
  return std::min(t * s.segments / s.total_steps + 1, s.segments);
}

double sparsity_at(const SparsitySchedule& s, std::size_t t) {
  validate_schedule(s);
  if (t > s.total_steps) {
    throw Error(Errc::StepOutOfRange, "t = " + std::to_string(t) + " beyond T = " + std::to_string(s.total_steps));
  }
  const double span = s.p_end - s.p_start;
  const double tt = static_cast<double>(t);
  const double horizon = static_cast<double>(s.total_steps);
  double p = s.p_start;
  switch (s.kind) {
    case ScheduleKind::Constant:
      break;
    case ScheduleKind::Linear:
      p = s.p_start + (tt / horizon) * span;
      break;
    case ScheduleKind::Step: {
      const auto i = static_cast<double>(step_segment(s, t));
      p = s.p_start + (i - 1.0) * span / static_cast<double>(s.segments);
      break;
    }
    case ScheduleKind::Exponential:
      p = s.p_start + span * (1.0 - std::exp(-tt / horizon));
      break;
  }
  const double lo = s.kind == ScheduleKind::Constant ? s.p_start : std::min(s.p_start, s.p_end);
  const double hi = s.kind == ScheduleKind::Constant ? s.p_start : std::max(s.p_start, s.p_end);
  return std::clamp(std::clamp(p, lo, hi), 0.0, 1.0);
}

SparsitySchedule schedule_from_json(const nlohmann::json& j, std::size_t total_steps) {
  SparsitySchedule s;
  try {
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.p_start = j.at("p_start").get<double>();
    s.p_end = s.kind == ScheduleKind::Constant ? s.p_start : j.value("p_end", s.p_start);
    s.segments = j.value("segments", std::size_t{1});
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("schedule JSON: ") + ex.what());
  }
  s.total_steps = total_steps;
  validate_schedule(s);
  return s;
}

nlohmann::json schedule_to_json(const SparsitySchedule& s) {
  return {{"kind", to_string(s.kind)}, {"p_start", s.p_start}, {"p_end", s.p_end}, {"segments", s.segments}};
}

}  // namespace maskcond
