#pragma once

#include <cstddef>
#include <vector>

namespace maskcond {

/// One gradient update. For diffusion training kl is zero and recon holds the
/// denoising loss.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double p_t = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

struct TrainingReport {
  std::vector<StepRecord> steps;

  /// Per-epoch means of recon/kl/total; p_t and step are taken from the
  /// epoch's last update.
  std::vector<StepRecord> epochs() const;
  std::vector<double> p_trace() const;
  std::vector<double> loss_trace() const;
};

/// Horizon T for a run of `updates` gradient steps, chosen so that the first
/// update sees t = 0 and the last sees t = T.
inline std::size_t schedule_horizon(std::size_t updates) { return updates > 1 ? updates - 1 : 1; }

}  // namespace maskcond
