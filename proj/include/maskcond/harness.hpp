#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskcond/config.hpp"
#include "maskcond/data.hpp"
#include "maskcond/mcdm.hpp"
#include "maskcond/mcvae.hpp"
#include "maskcond/training.hpp"

namespace maskcond {

/// One aggregated cell. `key` is the value of the swept variable as written to
/// CSV; `order` sorts keys (numeric value, or position for labels).
struct SweepRow {
  std::string key;
  double order = 0.0;
  double level = 0.0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  std::size_t seeds = 0;
};

struct SeedRow {
  std::string key;
  double order = 0.0;
  std::uint64_t seed = 0;
  double level = 0.0;
  double mse = 0.0;
  std::size_t slot = 0;  // position of `level` in the evaluated list
};

struct SweepResult {
  std::string sweep_var;
  std::vector<SweepRow> rows;
  std::vector<SeedRow> per_seed;

  /// Sorts rows by (order, level) and per-seed rows by (order, seed, level).
  void sort_rows();
  std::vector<std::string> keys() const;
  /// Rank correlation between level and mse_mean over the rows with `key`.
  double trend(const std::string& key) const;
};

/// Spearman correlation with average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Derived evaluation / training seeds: mix_seed(base, i) for i < count.
std::vector<std::uint64_t> derive_seeds(std::uint64_t base, std::size_t count);

/// Mean squared difference.
double mse(std::span<const double> a, std::span<const double> b);

/// Per level and seed: mask every test sample's conditions at that level,
/// generate, and average the per-sample MSE in data units. The random stream
/// for (seed, level index) is independent of the other levels.
SweepResult eval_mse_vs_sparsity(const McVae& model, const PointCloudDataset& test, std::span<const double> levels,
                                 std::span<const std::uint64_t> seeds, EvalMode mode, const std::string& key = "model");

/// Image variant: ancestral samples against ground-truth renders, MSE in [0, 1]
/// pixel units.
SweepResult eval_mse_vs_sparsity(const McDiffusion& model, const ImageDataset& test, std::span<const double> levels,
                                 std::span<const std::uint64_t> seeds, const std::string& key = "model");

/// Smallest pixel MSE (in [0, 1] units) between `image` (C, H, W) in [-1, 1]
/// and any image of `data`.
double nearest_image_mse(std::span<const double> image, const ImageDataset& data);

/// Prefix of a fixed shuffle of [0, n). Throws SizeTooLarge if size > n.
std::vector<std::size_t> size_subsample(std::size_t n, std::size_t size, std::uint64_t seed);

/// Trains one model per (size, training sparsity, seed) with a constant
/// schedule and evaluates it on `test`. Rows are keyed by size; `level` is the
/// training sparsity. Each cell is the MSE averaged over `eval.levels`, or with
/// matched inference the MSE at the cell's training sparsity.
SweepResult sweep_dataset_size(const PointCloudDataset& pool, const PointCloudDataset& test,
                               const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds);

struct ScheduleComparison {
  SweepResult result;
  std::vector<TrainingReport> reports;  // first seed of each schedule
};

/// Human-readable label such as "exponential(0.5~0.6)".
std::string schedule_label(const SparsitySchedule& s);

/// One model per (schedule, seed), evaluated at `levels`.
ScheduleComparison compare_schedules(const PointCloudDataset& train, const PointCloudDataset& test,
                                     std::span<const SparsitySchedule> schedules, const ExperimentConfig& cfg,
                                     std::span<const double> levels, std::span<const std::uint64_t> seeds);

/// Per schedule: MSE at inference sparsity 0 and the mean over all levels.
struct ScheduleSummary {
  std::string label;
  double mse_at_zero = 0.0;
  double std_at_zero = 0.0;
  double grid_mean = 0.0;
};
std::vector<ScheduleSummary> summarize_schedules(const SweepResult& result);

/// Trains a VAE from `init_seed` with the given schedule; training noise comes
/// from mix_seed(init_seed, 1).
McVae train_vae_model(const PointCloudDataset& train, const VaeConfig& cfg, const SparsitySchedule& schedule,
                      std::uint64_t init_seed, TrainingReport* report = nullptr);

}  // namespace maskcond
