#pragma once

#include <string>
#include <vector>

#include "maskcond/harness.hpp"
#include "maskcond/training.hpp"

namespace maskcond {

/// External value emitted next to computed metrics, never compared against.
struct ReferenceValue {
  std::string label;
  std::string metric;
  double value = 0.0;
};

/// `epoch,step,p_t,recon,kl,total`, one row per update.
void write_training_csv(const TrainingReport& report, const std::string& path);
/// `sweep_var,level,mse_mean,mse_std,seeds`.
void write_sweep_csv(const SweepResult& result, const std::string& path);
/// `sweep_var,seed,level,mse`.
void write_per_seed_csv(const SweepResult& result, const std::string& path);
/// `sweep_var,metric,value`: per key the rank trend and mean over levels,
/// followed by the reference rows.
void write_trend_csv(const SweepResult& result, const std::vector<ReferenceValue>& references, const std::string& path);
/// `schedule,mse_level0,mse_level0_std,mse_grid_mean`.
void write_schedule_table_csv(const std::vector<ScheduleSummary>& rows, const std::string& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// SVG 1.1 line chart with axes, ticks and a legend.
std::string svg_line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                           const std::string& y_label);
/// One series per key: mse_mean against level.
void write_sweep_svg(const SweepResult& result, const std::string& title, const std::string& path);

}  // namespace maskcond
