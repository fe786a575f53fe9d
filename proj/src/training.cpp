#include "maskcond/training.hpp"

namespace maskcond {

std::vector<StepRecord> TrainingReport::epochs() const {
  std::vector<StepRecord> out;
  std::size_t count = 0;
  for (const auto& s : steps) {
    if (out.empty() || out.back().epoch != s.epoch) {
      if (!out.empty()) {
        out.back().recon /= static_cast<double>(count);
        out.back().kl /= static_cast<double>(count);
        out.back().total /= static_cast<double>(count);
      }
      out.push_back(StepRecord{s.epoch, s.step, s.p_t, 0.0, 0.0, 0.0});
      count = 0;
    }
    auto& e = out.back();
    e.step = s.step;
    e.p_t = s.p_t;
    e.recon += s.recon;
    e.kl += s.kl;
    e.total += s.total;
    ++count;
  }
  if (!out.empty()) {
    out.back().recon /= static_cast<double>(count);
    out.back().kl /= static_cast<double>(count);
    out.back().total /= static_cast<double>(count);
  }
  return out;
}

std::vector<double> TrainingReport::p_trace() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.p_t);
  return out;
}

std::vector<double> TrainingReport::loss_trace() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.total);
  return out;
}

}  // namespace maskcond
