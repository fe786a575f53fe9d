// Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero if any criterion fails. Criteria can be selected by number:
//   acceptance 1 2 8
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maskcond/checkpoint.hpp"
#include "maskcond/cli.hpp"
#include "maskcond/conditions.hpp"
#include "maskcond/config.hpp"
#include "maskcond/data.hpp"
#include "maskcond/error.hpp"
#include "maskcond/harness.hpp"
#include "maskcond/mcdm.hpp"
#include "maskcond/mcvae.hpp"
#include "maskcond/schedules.hpp"
#include "support.hpp"

using namespace maskcond;
using maskcond::testing::check_gradients;
using maskcond::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

enum class Outcome { Pass, Fail, Skip };

struct Verdict {
  Outcome outcome = Outcome::Fail;
  std::string detail;
};

Verdict verdict(bool ok, const std::string& detail) { return {ok ? Outcome::Pass : Outcome::Fail, detail}; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Independent closed forms, evaluated in extended precision.
long double oracle_schedule(const SparsitySchedule& s, std::size_t t) {
  const long double a = s.p_start, b = s.p_end, T = s.total_steps, tt = t;
  switch (s.kind) {
    case ScheduleKind::Constant: return a;
    case ScheduleKind::Linear: return a + (b - a) * tt / T;
    case ScheduleKind::Step: {
      const long double n = s.segments;
      long double i = std::floor(tt * n / T) + 1.0L;
      if (i > n) i = n;
      return a + (i - 1.0L) * (b - a) / n;
    }
    case ScheduleKind::Exponential: return a + (b - a) * (1.0L - std::exp(-tt / T));
  }
  return -1.0L;
}

Verdict schedule_exactness() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t T = 4999;
  const std::vector<SparsitySchedule> schedules{
      SparsitySchedule::constant(0.37, T),          SparsitySchedule::linear(0.1, 0.9, T),
      SparsitySchedule::linear(0.8, 0.05, T),       SparsitySchedule::step(0.0, 1.0, 4, T),
      SparsitySchedule::step(0.9, 0.2, 7, T),       SparsitySchedule::exponential(0.1, 0.25, T),
      SparsitySchedule::exponential(0.6, 0.5, T)};
  Rng rng(101);
  std::vector<std::size_t> ts{0, T};
  while (ts.size() < 1000) ts.push_back(rng.index(T + 1));
  double worst = 0.0;
  for (const auto& s : schedules) {
    for (std::size_t t : ts) {
      worst = std::max(worst, static_cast<double>(std::abs(sparsity_at(s, t) - oracle_schedule(s, t))));
    }
  }
  const double step_gap = std::abs(sparsity_at(schedules[3], T) - (1.0 - 1.0 / 4.0));
  const double exp_end = std::abs(sparsity_at(schedules[5], T) - (0.1 + 0.15 * (1.0 - std::exp(-1.0))));
  const double secs = seconds_since(start);
  const bool ok = worst <= 1e-12 && step_gap <= 1e-12 && exp_end <= 1e-12 && secs < 1.0;
  return verdict(ok, "max |err| " + fmt(worst) + ", step endpoint err " + fmt(step_gap) + ", exponential endpoint err " +
                         fmt(exp_end) + ", " + fmt(secs, 3) + " s");
}

ConditionSchema wide_schema() {
  ConditionSchema s;
  for (int i = 0; i < 5; ++i) s.categorical.push_back({"c" + std::to_string(i), {"a", "b", "c"}, std::nullopt});
  for (int i = 0; i < 5; ++i) s.numerical.push_back({"n" + std::to_string(i), 0.0, 1.0, std::nullopt});
  return s;
}

Verdict masking_statistics() {
  const auto start = std::chrono::steady_clock::now();
  const ConditionSchema schema = wide_schema();
  ConditionVector full;
  for (std::size_t i = 0; i < 5; ++i) full.categorical.push_back(ObservedCategory{i % 3});
  for (std::size_t i = 0; i < 5; ++i) full.numerical.push_back(ObservedValue{0.1 * static_cast<double>(i)});
  Rng rng(202);
  const std::size_t vectors = 10000;  // 10 entries each
  std::ostringstream detail;
  bool ok = true;
  for (double p : {0.0, 0.1, 0.3, 0.5, 0.8, 1.0}) {
    std::size_t masked = 0;
    for (std::size_t i = 0; i < vectors; ++i) masked += mask_conditions(full, p, rng).masked_count();
    const double rate = static_cast<double>(masked) / static_cast<double>(vectors * full.size());
    const bool exact = p == 0.0 || p == 1.0;
    ok &= exact ? rate == p : std::abs(rate - p) <= 0.015;
    detail << "p=" << p << ":" << fmt(rate) << " ";
  }
  const double secs = seconds_since(start);
  ok &= secs < 5.0;
  detail << fmt(secs, 3) << " s";
  return verdict(ok, detail.str());
}

ConditionSchema toy_schema() {
  ConditionSchema s;
  s.categorical = {{"kind", {"a", "b", "c"}, std::nullopt}};
  s.numerical = {{"size", 0.0, 1.0, std::nullopt}, {"angle", -1.0, 1.0, std::nullopt}};
  s.d_cat = 2;
  s.d_num = 2;
  return s;
}

Verdict gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  const ConditionSchema schema = toy_schema();
  const std::vector<ConditionVector> conds{{{ObservedCategory{1}}, {ObservedValue{0.3}, ObservedValue{0.7}}},
                                           {{Masked{}}, {ObservedValue{0.9}, Masked{}}},
                                           ConditionVector::all_masked(schema)};

  VaeConfig vc;
  vc.num_keypoints = 3;
  vc.latent_dim = 2;
  vc.encoder_hidden = {6};
  vc.decoder_hidden = {6, 5};
  vc.keypoint_embedding_dim = 7;
  McVae vae(vc, schema, 31);
  Rng rng(32);
  const Tensor x = random_tensor({3, 6}, rng);
  const Tensor eps = random_tensor({3, 2}, rng);
  std::vector<Var> leaves;
  std::vector<std::string> names;
  for (const auto& p : vae.parameters().items()) {
    leaves.push_back(p.var);
    names.push_back(p.name);
  }
  const auto a = check_gradients([&] { return vae.loss(x, conds, eps).total; }, leaves, 1e-5, 1e-6, names);

  DiffusionConfig dc;
  dc.height = dc.width = 8;
  dc.timesteps = 50;
  dc.unet_levels = 1;
  dc.base_channels = 4;
  dc.condition_channels = 3;
  McDiffusion dm(dc, schema, 33);
  const Tensor x0 = random_tensor({3, 1, 8, 8}, rng);
  const Tensor noise = random_tensor({3, 1, 8, 8}, rng);
  const std::vector<std::size_t> ts{1, 17, 50};
  leaves.clear();
  names.clear();
  for (const auto& p : dm.parameters().items()) {
    leaves.push_back(p.var);
    names.push_back(p.name);
  }
  const auto b = check_gradients([&] { return dm.loss(x0, conds, ts, noise, true); }, leaves, 1e-4, 1e-5, names);
  const double secs = seconds_since(start);
  const bool ok = a.max_rel < 1e-4 && b.max_rel < 1e-4 && secs < 120.0;
  return verdict(ok, "vae max rel " + fmt(a.max_rel) + " at " + a.where + ", diffusion max rel " + fmt(b.max_rel) +
                         " at " + b.where + ", " + fmt(secs, 3) + " s");
}

Verdict kl_purity() {
  const std::vector<double> zero{0.0}, one{1.0};
  const double kl0 = elbo_loss(zero, zero, zero, zero, 1.0).kl;
  const double kl1 = elbo_loss(zero, zero, one, zero, 1.0).kl;
  const std::vector<double> z2{0.0, 0.0};
  const double kl2 = elbo_loss(z2, z2, z2, z2, 1.0).kl;

  McVae m([] {
    VaeConfig c;
    c.num_keypoints = 3;
    c.encoder_hidden = {5};
    c.decoder_hidden = {5};
    c.keypoint_embedding_dim = 4;
    return c;
  }(), toy_schema(), 41);
  Rng rng(42);
  const Tensor x = random_tensor({4, 6}, rng);
  const Tensor eps = random_tensor({4, 2}, rng);
  const std::vector<ConditionVector> conds{{{ObservedCategory{0}}, {ObservedValue{0.2}, ObservedValue{0.4}}},
                                           ConditionVector::all_masked(m.schema()),
                                           {{ObservedCategory{2}}, {Masked{}, ObservedValue{1.0}}},
                                           {{Masked{}}, {ObservedValue{0.0}, Masked{}}}};
  const double before = m.loss(x, conds, eps).kl.item();
  bool invariant = true;
  for (int round = 0; round < 5; ++round) {
    for (auto& p : m.parameters().items()) {
      if (p.name.rfind("embedder", 0) != 0) continue;
      for (auto& v : p.var.mutable_value().data()) v += 10.0 * rng.normal();
    }
    invariant &= m.loss(x, conds, eps).kl.item() == before;
  }
  const bool ok = kl0 == 0.0 && kl2 == 0.0 && kl1 == 0.5 && invariant;
  return verdict(ok, "kl(0,0)=" + fmt(kl0) + ", kl(1,0)=" + fmt(kl1) + ", invariant under embedder perturbation: " +
                         (invariant ? "yes" : "no"));
}

// Shared by criteria 5 and 6: three models trained on 2000 synthetic samples.
struct FidelityRun {
  PointCloudDataset train, test;
  std::vector<McVae> models;
  std::vector<double> train_seconds;
};

ExperimentConfig fidelity_config() {
  ExperimentConfig cfg;
  cfg.vae.latent_dim = 2;
  cfg.vae.epochs = 393;
  cfg.vae.batch_size = 64;
  return cfg;
}

const SparsitySchedule kFidelitySchedule = SparsitySchedule::constant(0.5);

FidelityRun& fidelity_run() {
  static FidelityRun run = [] {
    FidelityRun r;
    const auto data = synth_generate(SynthSpec{}, 2500, 500);
    std::tie(r.train, r.test) = split(data, 0.2, 501);
    for (std::uint64_t seed : derive_seeds(502, 3)) {
      const auto start = std::chrono::steady_clock::now();
      r.models.push_back(train_vae_model(r.train, fidelity_config().vae, kFidelitySchedule, seed));
      r.train_seconds.push_back(seconds_since(start));
    }
    return r;
  }();
  return run;
}

Verdict conditional_fidelity() {
  auto& run = fidelity_run();
  bool ok = run.train.size() == 2000;
  std::ostringstream detail;
  const double levels[] = {0.0, 1.0};
  const auto eval_seeds = derive_seeds(503, 1);
  for (std::size_t i = 0; i < run.models.size(); ++i) {
    const auto r = eval_mse_vs_sparsity(run.models[i], run.test, levels, eval_seeds, EvalMode::Posterior);
    const double full = r.rows[0].mse_mean, masked = r.rows[1].mse_mean;
    const double margin = 1.0 - full / masked;
    ok &= margin >= 0.2 && run.train_seconds[i] <= 600.0;
    detail << "seed " << i << ": full " << fmt(full) << " vs masked " << fmt(masked) << " (margin " << fmt(margin, 3)
           << ", " << fmt(run.train_seconds[i], 3) << " s); ";
  }
  return verdict(ok, detail.str());
}

Verdict sparsity_trend() {
  auto& run = fidelity_run();
  const std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  const auto eval_seeds = derive_seeds(504, 1);
  std::vector<double> mean(levels.size(), 0.0);
  std::ostringstream detail;
  for (auto& m : run.models) {
    const auto r = eval_mse_vs_sparsity(m, run.test, levels, eval_seeds, EvalMode::Posterior);
    for (std::size_t j = 0; j < levels.size(); ++j) mean[j] += r.rows[j].mse_mean / static_cast<double>(run.models.size());
  }
  const double rho = spearman(levels, mean);
  detail << "spearman " << fmt(rho) << ", mean mse";
  for (double v : mean) detail << " " << fmt(v);
  return verdict(rho >= 0.8, detail.str());
}

Verdict size_inversion() {
  const auto start = std::chrono::steady_clock::now();
  const auto data = synth_generate(SynthSpec{}, 2500, 700);
  const auto [pool, test] = split(data, 0.2, 701);
  ExperimentConfig cfg = fidelity_config();
  cfg.sweep.sizes = {10, 2000};
  cfg.sweep.train_sparsities = {0.0, 0.8};
  cfg.eval.levels = {0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  struct Cells {
    double s10_0, s10_8, s2k_0, s2k_8;
  };
  auto run_sweep = [&](bool matched) {
    cfg.sweep.matched_inference = matched;
    const auto result = sweep_dataset_size(pool, test, cfg, derive_seeds(702, 5));
    auto cell = [&](const std::string& size, double p) {
      for (const auto& r : result.rows) {
        if (r.key == size && r.level == p) return r.mse_mean;
      }
      return std::nan("");
    };
    return Cells{cell("10", 0.0), cell("10", 0.8), cell("2000", 0.0), cell("2000", 0.8)};
  };
  auto describe = [](const Cells& c) {
    return "size 10: " + fmt(c.s10_0) + " (p=0) vs " + fmt(c.s10_8) + " (p=0.8); size 2000: " + fmt(c.s2k_0) + " vs " +
           fmt(c.s2k_8);
  };
  // The verdict uses the default grid-averaged cells; matched-inference cells
  // are reported alongside.
  const Cells grid = run_sweep(false);
  const Cells matched = run_sweep(true);
  const bool ok = grid.s10_8 <= grid.s10_0 && grid.s2k_8 > grid.s2k_0;
  return verdict(ok, "grid-averaged " + describe(grid) + " | matched " + describe(matched) + "; " +
                         fmt(seconds_since(start), 3) + " s");
}

Verdict forward_moments() {
  DiffusionConfig cfg;
  const NoiseSchedule ns = init_noise_schedule(cfg);
  long double product = 1.0L;
  for (std::size_t t = 1; t <= 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t - 1) / 999.0L;
    product *= 1.0L - beta;
  }
  const double bar_err = std::abs(ns.alpha_bar(1000) - static_cast<double>(product));
  Rng rng(808);
  const std::size_t n = 100000;
  bool ok = bar_err <= 1e-10;
  std::ostringstream detail;
  detail << "alpha_bar(1000) err " << fmt(bar_err) << "; var ratio";
  for (std::size_t t : {1, 100, 500, 1000}) {
    const Tensor x0 = random_tensor({n}, rng);
    const Tensor eps = random_tensor({n}, rng);
    const Tensor xt = q_sample(x0, t, eps, ns);
    double mean = 0.0, sq = 0.0;
    for (double v : xt.data()) mean += v;
    mean /= static_cast<double>(n);
    for (double v : xt.data()) sq += (v - mean) * (v - mean);
    const double var = sq / static_cast<double>(n - 1);
    const double expected = ns.alpha_bar(t) + (1.0 - ns.alpha_bar(t));
    ok &= std::abs(var / expected - 1.0) <= 0.02;
    detail << " t=" << t << ":" << fmt(var / expected);
  }
  return verdict(ok, detail.str());
}

Verdict overfit_recovery() {
  const auto start = std::chrono::steady_clock::now();
  SynthSpec spec;
  const auto data = render_dataset(synth_generate(spec, 8, 900), spec, {1, 32, 32});
  DiffusionConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.unet_levels = 3;
  cfg.base_channels = 16;
  cfg.batch_size = 8;
  cfg.train_steps = 5000;
  McDiffusion model(cfg, data.schema, 901);
  Rng rng(902);
  const auto report = train_dm(model, data, SparsitySchedule::constant(0.0), rng);
  const double train_secs = seconds_since(start);
  Rng sample_rng(903);
  const Tensor samples = sample(model, data.conditions, sample_rng);
  const std::size_t pixels = samples.size() / data.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::span<const double> img(samples.data().data() + i * pixels, pixels);
    worst = std::max(worst, nearest_image_mse(img, data));
  }
  const double final_loss = report.steps.back().total;
  const bool ok = worst < 0.05 && train_secs <= 1800.0;
  return verdict(ok, "worst nearest-image mse " + fmt(worst) + ", final loss " + fmt(final_loss) + ", training " +
                         fmt(train_secs, 4) + " s, total " + fmt(seconds_since(start), 4) + " s");
}

Verdict injection_invariants() {
  const ConditionSchema schema = toy_schema();
  DiffusionConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.timesteps = 100;
  cfg.unet_levels = 3;
  cfg.base_channels = 8;
  cfg.condition_channels = 5;
  cfg.attention_heads = 2;
  McDiffusion model(cfg, schema, 1001);
  Rng rng(1002);

  const std::vector<ConditionVector> a{{{ObservedCategory{0}}, {ObservedValue{0.1}, ObservedValue{0.9}}},
                                       {{ObservedCategory{2}}, {Masked{}, ObservedValue{0.4}}},
                                       ConditionVector::all_masked(schema)};
  const std::vector<ConditionVector> b{{{ObservedCategory{1}}, {ObservedValue{0.8}, ObservedValue{0.2}}},
                                       {{Masked{}}, {ObservedValue{0.5}, Masked{}}},
                                       {{ObservedCategory{0}}, {ObservedValue{0.0}, ObservedValue{1.0}}}};
  const Var e_y = model.embedder().embed_batch(a);
  double max_spread = 0.0;
  for (const auto& inj : model.injectors()) {
    for (bool training : {true, false}) {
      const Tensor t = inj(e_y, 7, 5, training).value();
      const std::size_t hw = 35;
      for (std::size_t bc = 0; bc < t.size() / hw; ++bc) {
        double lo = t[bc * hw], hi = t[bc * hw];
        for (std::size_t k = 1; k < hw; ++k) {
          lo = std::min(lo, t[bc * hw + k]);
          hi = std::max(hi, t[bc * hw + k]);
        }
        max_spread = std::max(max_spread, hi - lo);
      }
    }
  }
  bool arithmetic = model.level_input_channels().size() == cfg.unet_levels;
  const auto first = model.first_block_input_channels();
  for (std::size_t l = 0; l < first.size(); ++l) {
    arithmetic &= first[l] == model.level_input_channels()[l] + cfg.condition_channels;
  }

  const Tensor z = random_tensor({3, 1, 16, 16}, rng);
  const std::vector<std::size_t> ts{5, 50, 100};
  const Tensor ea = model.predict_noise(Var::constant(z), ts, a, false).value();
  const Tensor eb = model.predict_noise(Var::constant(z), ts, b, false).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) diff = std::max(diff, std::abs(ea[i] - eb[i]));
  const bool ok = max_spread == 0.0 && arithmetic && diff > 0.0;
  return verdict(ok, "max spatial spread " + fmt(max_spread) + ", channel arithmetic " +
                         (arithmetic ? "ok" : "broken") + ", max |eps_a - eps_b| " + fmt(diff));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Verdict determinism_and_persistence() {
  const fs::path root = fs::temp_directory_path() / "maskcond_acceptance_11";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "cfg.json") << R"({
      "vae": {"encoder_hidden": [32], "decoder_hidden": [32, 32], "keypoint_embedding_dim": 32, "epochs": 10},
      "diffusion": {"image_shape": [1, 16, 16], "T_steps": 20, "unet_levels": 2, "base_channels": 8, "d_c": 4,
                    "attention_heads": 2, "batch_size": 4, "train_steps": 10},
      "schedule": {"kind": "linear", "p_start": 0.1, "p_end": 0.6},
      "sweep": {"sizes": [10, 50], "train_sparsities": [0.0, 0.8]}
    })";
  }
  bool ok = true;
  const std::string cfg = (root / "cfg.json").string();
  for (const char* name : {"a", "b"}) {
    const std::string dir = (root / name).string();
    ok &= run_cli({"gen-synth", "--samples", "300", "--images", "6", "--image-size", "16", "--seed", "11", "--out",
                   dir + "/data"}) == 0;
    ok &= run_cli({"train", "vae", "--config", cfg, "--data", dir + "/data", "--seed", "12", "--out", dir + "/vae"}) == 0;
    ok &= run_cli({"train", "dm", "--config", cfg, "--data", dir + "/data", "--seed", "12", "--out", dir + "/dm"}) == 0;
    ok &= run_cli({"eval", "sparsity", "--config", cfg, "--data", dir + "/data", "--model", dir + "/vae/vae.ckpt",
                   "--seed", "13", "--out", dir + "/eval"}) == 0;
    ok &= run_cli({"sweep", "size", "--config", cfg, "--data", dir + "/data", "--seed", "14", "--out", dir + "/sweep"}) ==
          0;
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root / "a");
    if (entry.path().extension() != ".csv" && entry.path().extension() != ".ckpt") continue;
    ++compared;
    differing += slurp(entry.path()) != slurp(root / "b" / rel);
  }
  ok &= compared >= 10 && differing == 0;

  // Bit-exact round trips for both model kinds.
  bool exact = true;
  {
    const auto vae = load_vae_checkpoint((root / "a/vae/vae.ckpt").string());
    save_checkpoint(vae, (root / "vae_again.ckpt").string());
    const auto back = load_vae_checkpoint((root / "vae_again.ckpt").string());
    save_checkpoint(back, (root / "vae_third.ckpt").string());
    exact &= slurp(root / "vae_again.ckpt") == slurp(root / "vae_third.ckpt");
    const ConditionVector cv{{ObservedCategory{1}, Masked{}}, {ObservedValue{0.6}}};
    Rng r1(5), r2(5);
    exact &= generate(vae, cv, PriorMode{}, r1) == generate(back, cv, PriorMode{}, r2);

    const auto dm = load_diffusion_checkpoint((root / "a/dm/dm.ckpt").string());
    save_checkpoint(dm, (root / "dm_again.ckpt").string());
    const auto dm_back = load_diffusion_checkpoint((root / "dm_again.ckpt").string());
    save_checkpoint(dm_back, (root / "dm_third.ckpt").string());
    exact &= slurp(root / "dm_again.ckpt") == slurp(root / "dm_third.ckpt");
    Rng zr(6);
    const Tensor z = random_tensor({2, 1, 16, 16}, zr);
    const std::vector<std::size_t> ts{3, 19};
    const std::vector<ConditionVector> conds{cv, ConditionVector::all_masked(dm.schema())};
    exact &= dm.predict_noise(Var::constant(z), ts, conds, false).value().vec() ==
             dm_back.predict_noise(Var::constant(z), ts, conds, false).value().vec();
  }
  ok &= exact;
  fs::remove_all(root);
  return verdict(ok, std::to_string(compared) + " files compared, " + std::to_string(differing) +
                         " differ; checkpoint round trips " + (exact ? "bit-exact" : "NOT bit-exact"));
}

// Needs a prepared GeoBiked directory (pointclouds.csv + schema.json in the
// `gen-synth` layout) named by MASKCOND_GEOBIKED.
Verdict geobiked_extended() {
  const char* dir = std::getenv("MASKCOND_GEOBIKED");
  if (dir == nullptr || !fs::exists(fs::path(dir) / "pointclouds.csv")) {
    return {Outcome::Skip, "set MASKCOND_GEOBIKED to a prepared GeoBiked directory"};
  }
  const auto data = load_pointcloud_csv((fs::path(dir) / "pointclouds.csv").string(),
                                        (fs::path(dir) / "schema.json").string());
  const auto [train, test] = split(data, 0.2, 1201);
  VaeConfig cfg;
  cfg.num_keypoints = 12;
  cfg.keypoint_embedding_dim = 203;
  cfg.batch_size = 140;
  cfg.epochs = 393;
  const McVae model = train_vae_model(train, cfg, SparsitySchedule::constant(0.0), 1202);
  const std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8, 0.9};
  const auto r = eval_mse_vs_sparsity(model, test, levels, derive_seeds(1203, 3), EvalMode::Posterior);
  double mean = 0.0;
  for (const auto& row : r.rows) mean += row.mse_mean / static_cast<double>(r.rows.size());
  return verdict(mean >= 0.045 && mean <= 0.18, "mean mse over levels " + fmt(mean));
}

struct Criterion {
  int id;
  std::string name;
  std::function<Verdict()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "schedule exactness", schedule_exactness},
      {2, "masking statistics", masking_statistics},
      {3, "gradient correctness", gradient_correctness},
      {4, "kl purity and closed form", kl_purity},
      {5, "conditional fidelity", conditional_fidelity},
      {6, "mse rises with inference sparsity", sparsity_trend},
      {7, "small-data sparsity inversion", size_inversion},
      {8, "forward-process moments", forward_moments},
      {9, "diffusion overfit recovery", overfit_recovery},
      {10, "injection invariants", injection_invariants},
      {11, "determinism and persistence", determinism_and_persistence},
      {12, "geobiked extended", geobiked_extended},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Skip ? "SKIP" : "FAIL";
    failures += v.outcome == Outcome::Fail;
    std::cout << tag << " " << c.id << " " << c.name << ": " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
