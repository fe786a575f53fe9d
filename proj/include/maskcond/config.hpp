#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskcond/data.hpp"
#include "maskcond/mcdm.hpp"
#include "maskcond/mcvae.hpp"
#include "maskcond/schedules.hpp"

namespace maskcond {

enum class EvalMode { Posterior, Prior };

std::string to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& name);

struct EvalConfig {
  std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  std::size_t seeds = 3;
  EvalMode mode = EvalMode::Posterior;
};

struct SweepConfig {
  std::vector<std::size_t> sizes{10, 2000};
  std::vector<double> train_sparsities{0.0, 0.8};
  // true: evaluate each cell at inference sparsity equal to its training
  // sparsity; false: average over EvalConfig::levels.
  bool matched_inference = false;
};

/// Everything a CLI run needs. Unknown keys are rejected.
struct ExperimentConfig {
  VaeConfig vae;
  DiffusionConfig diffusion;
  SparsitySchedule schedule = SparsitySchedule::constant(0.0);
  std::vector<SparsitySchedule> schedules;
  EvalConfig eval;
  SweepConfig sweep;
  SynthSpec synth;
  double test_fraction = 0.2;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace maskcond
