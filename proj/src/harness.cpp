#include "maskcond/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "maskcond/csv.hpp"
#include "maskcond/error.hpp"
#include "maskcond/rng.hpp"

namespace maskcond {

namespace {

void check_levels(std::span<const double> levels) {
  for (double p : levels) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidProbability, "sparsity level " + csv::format_double(p));
  }
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Collapses per-seed rows into mean and sample standard deviation per (key, level).
void aggregate(SweepResult& result) {
  std::map<std::pair<double, std::size_t>, std::vector<const SeedRow*>> cells;
  for (const auto& r : result.per_seed) cells[{r.order, r.slot}].push_back(&r);
  result.rows.clear();
  for (const auto& [k, group] : cells) {
    SweepRow row;
    row.key = group.front()->key;
    row.order = k.first;
    row.level = group.front()->level;
    row.seeds = group.size();
    for (const auto* g : group) row.mse_mean += g->mse;
    row.mse_mean /= static_cast<double>(group.size());
    if (group.size() > 1) {
      for (const auto* g : group) row.mse_std += (g->mse - row.mse_mean) * (g->mse - row.mse_mean);
      row.mse_std = std::sqrt(row.mse_std / static_cast<double>(group.size() - 1));
    }
    result.rows.push_back(std::move(row));
  }
  result.sort_rows();
}

std::vector<ConditionVector> masked_copies(std::span<const ConditionVector> conds, double level, Rng& rng) {
  std::vector<ConditionVector> out;
  out.reserve(conds.size());
  for (const auto& cv : conds) out.push_back(mask_conditions(cv, level, rng));
  return out;
}

}  // namespace

void SweepResult::sort_rows() {
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.order, a.level) < std::tie(b.order, b.level);
  });
  std::stable_sort(per_seed.begin(), per_seed.end(), [](const SeedRow& a, const SeedRow& b) {
    return std::tie(a.order, a.seed, a.slot) < std::tie(b.order, b.seed, b.slot);
  });
}

std::vector<std::string> SweepResult::keys() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.key) == out.end()) out.push_back(r.key);
  }
  return out;
}

double SweepResult::trend(const std::string& key) const {
  std::vector<double> x, y;
  for (const auto& r : rows) {
    if (r.key == key) {
      x.push_back(r.level);
      y.push_back(r.mse_mean);
    }
  }
  return spearman(x, y);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(Errc::ShapeMismatch, "spearman: lengths differ");
  if (x.size() < 2) return 0.0;
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<std::uint64_t> derive_seeds(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = mix_seed(base, i);
  return out;
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw Error(Errc::ShapeMismatch, "mse: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

SweepResult eval_mse_vs_sparsity(const McVae& model, const PointCloudDataset& test, std::span<const double> levels,
                                 std::span<const std::uint64_t> seeds, EvalMode mode, const std::string& key) {
  if (!(test.schema == model.schema())) throw Error(Errc::SchemaMismatch, "test schema differs from the model's");
  if (test.size() == 0) throw Error(Errc::EmptySplit, "test set is empty");
  check_levels(levels);
  const std::size_t dim = model.input_dim();
  SweepResult result;
  result.sweep_var = "model";
  for (std::uint64_t seed : seeds) {
    for (std::size_t li = 0; li < levels.size(); ++li) {
      Rng rng(mix_seed(seed, li));
      double total = 0.0;
      for (std::size_t r = 0; r < test.size(); ++r) {
        std::span<const double> truth(test.keypoints.ptr() + r * dim, dim);
        const ConditionVector cv = mask_conditions(test.conditions[r], levels[li], rng);
        GenerationMode gm = PriorMode{};
        if (mode == EvalMode::Posterior) gm = PosteriorMode{{truth.begin(), truth.end()}};
        const auto out = generate(model, cv, gm, rng);
        total += mse(out, truth);
      }
      result.per_seed.push_back({key, 0.0, seed, levels[li], total / static_cast<double>(test.size()), li});
    }
  }
  aggregate(result);
  return result;
}

SweepResult eval_mse_vs_sparsity(const McDiffusion& model, const ImageDataset& test, std::span<const double> levels,
                                 std::span<const std::uint64_t> seeds, const std::string& key) {
  if (!(test.schema == model.schema())) throw Error(Errc::SchemaMismatch, "test schema differs from the model's");
  if (test.size() == 0) throw Error(Errc::EmptySplit, "test set is empty");
  check_levels(levels);
  const std::size_t per = shape_numel(test.image_shape());
  SweepResult result;
  result.sweep_var = "model";
  for (std::uint64_t seed : seeds) {
    for (std::size_t li = 0; li < levels.size(); ++li) {
      Rng rng(mix_seed(seed, li));
      const auto conds = masked_copies(test.conditions, levels[li], rng);
      const Tensor images = sample(model, conds, rng);
      double total = 0.0;
      for (std::size_t r = 0; r < test.size(); ++r) {
        // Pixels in [-1, 1]; halve differences to measure in [0, 1] units.
        std::span<const double> a(images.ptr() + r * per, per), b(test.images.ptr() + r * per, per);
        total += 0.25 * mse(a, b);
      }
      result.per_seed.push_back({key, 0.0, seed, levels[li], total / static_cast<double>(test.size()), li});
    }
  }
  aggregate(result);
  return result;
}

double nearest_image_mse(std::span<const double> image, const ImageDataset& data) {
  const std::size_t per = shape_numel(data.image_shape());
  if (image.size() != per) throw Error(Errc::ShapeMismatch, "image size differs from the dataset's");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < data.size(); ++r) {
    best = std::min(best, 0.25 * mse(image, std::span<const double>(data.images.ptr() + r * per, per)));
  }
  return best;
}

std::vector<std::size_t> size_subsample(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size > n) throw Error(Errc::SizeTooLarge, std::to_string(size) + " samples requested from " + std::to_string(n));
  if (size == 0) throw Error(Errc::EmptySplit, "size 0 subsample");
  auto idx = shuffled_indices(n, seed);
  idx.resize(size);
  return idx;
}

McVae train_vae_model(const PointCloudDataset& train, const VaeConfig& cfg, const SparsitySchedule& schedule,
                      std::uint64_t init_seed, TrainingReport* report) {
  McVae model(cfg, train.schema, init_seed);
  Rng rng(mix_seed(init_seed, 1));
  auto rep = train_vae(model, train, schedule, rng);
  if (report) *report = std::move(rep);
  return model;
}

SweepResult sweep_dataset_size(const PointCloudDataset& pool, const PointCloudDataset& test, const ExperimentConfig& cfg,
                               std::span<const std::uint64_t> seeds) {
  for (std::size_t size : cfg.sweep.sizes) {
    if (size > pool.size()) {
      throw Error(Errc::SizeTooLarge, "size " + std::to_string(size) + " exceeds the " + std::to_string(pool.size()) +
                                          " available training samples");
    }
  }
  check_levels(cfg.sweep.train_sparsities);
  SweepResult result;
  result.sweep_var = "size";
  for (std::uint64_t seed : seeds) {
    for (std::size_t size : cfg.sweep.sizes) {
      const auto rows = size_subsample(pool.size(), size, seed);
      PointCloudDataset train = pool.subset(rows);
      train.standardization = compute_standardization(train.keypoints);
      for (std::size_t pi = 0; pi < cfg.sweep.train_sparsities.size(); ++pi) {
        const double p = cfg.sweep.train_sparsities[pi];
        const McVae model = train_vae_model(train, cfg.vae, SparsitySchedule::constant(p), seed);
        const std::uint64_t eval_seed = mix_seed(seed, 2);
        double value = 0.0;
        if (cfg.sweep.matched_inference) {
          const double level[] = {p};
          value = eval_mse_vs_sparsity(model, test, level, std::span(&eval_seed, 1), cfg.eval.mode).rows.front().mse_mean;
        } else {
          const auto r = eval_mse_vs_sparsity(model, test, cfg.eval.levels, std::span(&eval_seed, 1), cfg.eval.mode);
          for (const auto& row : r.rows) value += row.mse_mean;
          value /= static_cast<double>(r.rows.size());
        }
        result.per_seed.push_back({std::to_string(size), static_cast<double>(size), seed, p, value, pi});
      }
    }
  }
  aggregate(result);
  return result;
}

std::string schedule_label(const SparsitySchedule& s) {
  const std::string a = csv::format_double(s.p_start), b = csv::format_double(s.p_end);
  switch (s.kind) {
    case ScheduleKind::Constant: return "constant(" + a + ")";
    case ScheduleKind::Linear: return "linear(" + a + "~" + b + ")";
    case ScheduleKind::Step: return "step(" + a + "~" + b + ";" + std::to_string(s.segments) + ")";
    case ScheduleKind::Exponential: return "exponential(" + a + "~" + b + ")";
  }
  return "unknown";
}

ScheduleComparison compare_schedules(const PointCloudDataset& train, const PointCloudDataset& test,
                                     std::span<const SparsitySchedule> schedules, const ExperimentConfig& cfg,
                                     std::span<const double> levels, std::span<const std::uint64_t> seeds) {
  for (const auto& s : schedules) validate_schedule(s);
  check_levels(levels);
  ScheduleComparison out;
  out.result.sweep_var = "schedule";
  for (std::size_t si = 0; si < schedules.size(); ++si) {
    const std::string label = schedule_label(schedules[si]);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      TrainingReport report;
      const McVae model = train_vae_model(train, cfg.vae, schedules[si], seeds[k], &report);
      const std::uint64_t eval_seed = mix_seed(seeds[k], 2);
      const auto r = eval_mse_vs_sparsity(model, test, levels, std::span(&eval_seed, 1), cfg.eval.mode);
      for (std::size_t j = 0; j < r.rows.size(); ++j) {
        out.result.per_seed.push_back({label, static_cast<double>(si), seeds[k], r.rows[j].level, r.rows[j].mse_mean, j});
      }
      if (k == 0) out.reports.push_back(std::move(report));
    }
  }
  aggregate(out.result);
  return out;
}

std::vector<ScheduleSummary> summarize_schedules(const SweepResult& result) {
  std::vector<ScheduleSummary> out;
  for (const auto& key : result.keys()) {
    ScheduleSummary s;
    s.label = key;
    std::size_t count = 0;
    for (const auto& r : result.rows) {
      if (r.key != key) continue;
      if (r.level == 0.0) {
        s.mse_at_zero = r.mse_mean;
        s.std_at_zero = r.mse_std;
      }
      s.grid_mean += r.mse_mean;
      ++count;
    }
    if (count) s.grid_mean /= static_cast<double>(count);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace maskcond
