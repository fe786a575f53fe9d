#include "maskcond/cli.hpp"

#include <filesystem>
#include <fstream>

#include <CLI11.hpp>

#include "maskcond/checkpoint.hpp"
#include "maskcond/config.hpp"
#include "maskcond/csv.hpp"
#include "maskcond/data.hpp"
#include "maskcond/error.hpp"
#include "maskcond/harness.hpp"
#include "maskcond/image_io.hpp"
#include "maskcond/report.hpp"
#include "maskcond/rng.hpp"

namespace maskcond::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream indices for mix_seed(--seed, ...).
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kSampleStream = 4;

struct Common {
  std::string config;
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool svg = false;
};

ExperimentConfig experiment(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
}

std::string require_data(const Common& c) {
  if (c.data.empty()) throw CLI::RequiredError("--data");
  return c.data;
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

PointCloudDataset load_pointclouds(const std::string& dir) {
  return load_pointcloud_csv(in_dir(dir, "pointclouds.csv"), in_dir(dir, "schema.json"));
}

ImageDataset load_images(const std::string& dir) {
  const ConditionSchema schema = load_schema(in_dir(dir, "schema.json"));
  const fs::path images = fs::path(dir) / "images";
  return load_image_dataset(fs::exists(images / "annotations.csv") ? images.string() : dir, schema);
}

void write_training_svg(const TrainingReport& report, const fs::path& path) {
  Series loss{"total", {}, {}}, p{"p_t", {}, {}};
  for (const auto& e : report.epochs()) {
    loss.x.push_back(static_cast<double>(e.step));
    loss.y.push_back(e.total);
  }
  for (const auto& s : report.steps) {
    p.x.push_back(static_cast<double>(s.step));
    p.y.push_back(s.p_t);
  }
  std::ofstream(path, std::ios::binary) << svg_line_chart({loss}, "training loss", "update", "loss");
  std::ofstream(path.parent_path() / "sparsity.svg", std::ios::binary)
      << svg_line_chart({p}, "masking probability", "update", "p_t");
}

void emit_sweep(const SweepResult& r, const fs::path& out, const std::string& stem, const std::string& title,
                const std::vector<ReferenceValue>& refs, bool svg) {
  write_sweep_csv(r, (out / (stem + ".csv")).string());
  write_per_seed_csv(r, (out / (stem + "_per_seed.csv")).string());
  write_trend_csv(r, refs, (out / (stem + "_trend.csv")).string());
  if (svg) write_sweep_svg(r, title, (out / (stem + ".svg")).string());
}

void cmd_gen_synth(const Common& c, std::size_t samples, std::size_t images, std::size_t image_size,
                   std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  const fs::path out = prepare_out(c);
  const PointCloudDataset clouds = synth_generate(cfg.synth, samples, c.seed);
  write_pointcloud_csv(clouds, (out / "pointclouds.csv").string());
  save_schema(clouds.schema, (out / "schema.json").string());
  std::ofstream(out / "synth.json", std::ios::binary) << synth_spec_to_json(cfg.synth).dump(2) << '\n';
  if (images > 0) {
    const std::size_t size = image_size ? image_size : cfg.diffusion.height;
    const ImageDataset rendered =
        render_dataset(clouds.prefix(std::min(images, samples)), cfg.synth, {cfg.diffusion.channels, size, size});
    write_image_dataset(rendered, (out / "images").string());
  }
  log << "wrote " << samples << " point clouds";
  if (images) log << " and " << std::min(images, samples) << " images";
  log << " to " << out.string() << '\n';
}

json split_info(const Common& c, const ExperimentConfig& cfg) {
  return {{"split_seed", c.seed}, {"test_fraction", cfg.test_fraction}};
}

void cmd_train_vae(const Common& c, std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  const auto [train, test] = split(load_pointclouds(require_data(c)), cfg.test_fraction, c.seed);
  const fs::path out = prepare_out(c);
  McVae model(cfg.vae, train.schema, mix_seed(c.seed, kInitStream));
  Rng rng(mix_seed(c.seed, kTrainStream));
  const TrainingReport report = train_vae(model, train, cfg.schedule, rng);
  save_checkpoint(model, (out / "vae.ckpt").string(), split_info(c, cfg));
  write_training_csv(report, (out / "training.csv").string());
  if (c.svg) write_training_svg(report, out / "training.svg");
  log << "trained VAE on " << train.size() << " samples (" << report.steps.size() << " updates), final loss "
      << csv::format_double(report.steps.back().total) << '\n';
}

void cmd_train_dm(const Common& c, std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  const ImageDataset data = load_images(require_data(c));
  const fs::path out = prepare_out(c);
  McDiffusion model(cfg.diffusion, data.schema, mix_seed(c.seed, kInitStream));
  Rng rng(mix_seed(c.seed, kTrainStream));
  const TrainingReport report = train_dm(model, data, cfg.schedule, rng);
  save_checkpoint(model, (out / "dm.ckpt").string(), split_info(c, cfg));
  write_training_csv(report, (out / "training.csv").string());
  if (c.svg) write_training_svg(report, out / "training.svg");
  log << "trained diffusion model on " << data.size() << " images (" << report.steps.size() << " updates), final loss "
      << csv::format_double(report.steps.back().total) << '\n';
}

void cmd_eval_sparsity(const Common& c, const std::string& model_path, std::vector<double> levels,
                       std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  if (levels.empty()) levels = cfg.eval.levels;
  const json header = read_checkpoint_header(model_path);
  const json extra = header.value("extra", json::object());
  const std::uint64_t split_seed = extra.value("split_seed", c.seed);
  const double fraction = extra.value("test_fraction", cfg.test_fraction);
  const auto seeds = derive_seeds(mix_seed(c.seed, kEvalStream), cfg.eval.seeds);
  const fs::path out = prepare_out(c);
  SweepResult r;
  std::vector<ReferenceValue> refs;
  if (header.at("kind") == "vae") {
    const McVae model = load_vae_checkpoint(model_path);
    const auto parts = split(load_pointclouds(require_data(c)), fraction, split_seed);
    r = eval_mse_vs_sparsity(model, parts.second, levels, seeds, cfg.eval.mode);
    refs.push_back({"geobiked_reference", "mse_mean_over_levels", 0.0895});
  } else {
    const McDiffusion model = load_diffusion_checkpoint(model_path);
    r = eval_mse_vs_sparsity(model, load_images(require_data(c)), levels, seeds);
  }
  emit_sweep(r, out, "eval_sparsity", "MSE against inference sparsity", refs, c.svg);
  log << "evaluated " << levels.size() << " levels x " << seeds.size() << " seeds, trend "
      << csv::format_double(r.trend("model")) << '\n';
}

void cmd_sweep_size(const Common& c, std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  const auto [pool, test] = split(load_pointclouds(require_data(c)), cfg.test_fraction, c.seed);
  const auto seeds = derive_seeds(mix_seed(c.seed, kTrainStream), cfg.eval.seeds);
  const SweepResult r = sweep_dataset_size(pool, test, cfg, seeds);
  emit_sweep(r, prepare_out(c), "sweep_size", "MSE by dataset size", {}, c.svg);
  log << "swept " << cfg.sweep.sizes.size() << " sizes x " << cfg.sweep.train_sparsities.size() << " sparsities x "
      << seeds.size() << " seeds\n";
}

void cmd_compare_schedules(const Common& c, std::ostream& log) {
  const ExperimentConfig cfg = experiment(c);
  std::vector<SparsitySchedule> schedules = cfg.schedules;
  if (schedules.empty()) {
    schedules = {SparsitySchedule::constant(0.5), SparsitySchedule::linear(0.5, 0.6, 1),
                 SparsitySchedule::step(0.5, 0.6, 5, 1), SparsitySchedule::exponential(0.5, 0.6, 1),
                 SparsitySchedule::exponential(0.6, 0.5, 1)};
  }
  const auto [train, test] = split(load_pointclouds(require_data(c)), cfg.test_fraction, c.seed);
  const auto seeds = derive_seeds(mix_seed(c.seed, kTrainStream), cfg.eval.seeds);
  const ScheduleComparison cmp = compare_schedules(train, test, schedules, cfg, cfg.eval.levels, seeds);
  const fs::path out = prepare_out(c);
  emit_sweep(cmp.result, out, "compare_schedules", "MSE by training schedule", {}, c.svg);
  write_schedule_table_csv(summarize_schedules(cmp.result), (out / "schedule_table.csv").string());
  for (std::size_t i = 0; i < cmp.reports.size(); ++i) {
    write_training_csv(cmp.reports[i], (out / ("training_schedule" + std::to_string(i) + ".csv")).string());
  }
  log << "compared " << schedules.size() << " schedules x " << seeds.size() << " seeds\n";
}

void cmd_sample(const Common& c, const std::string& model_path, const std::vector<std::string>& assignments,
                std::size_t count, std::ostream& log) {
  const json header = read_checkpoint_header(model_path);
  const fs::path out = prepare_out(c);
  Rng rng(mix_seed(c.seed, kSampleStream));
  if (header.at("kind") == "vae") {
    const McVae model = load_vae_checkpoint(model_path);
    const ConditionVector cv = parse_condition_assignments(model.schema(), assignments);
    PointCloudDataset samples;
    samples.schema = model.schema();
    samples.keypoints = Tensor({count, model.input_dim()});
    for (std::size_t i = 0; i < count; ++i) {
      const auto kp = generate(model, cv, PriorMode{}, rng);
      std::copy(kp.begin(), kp.end(), samples.keypoints.ptr() + i * kp.size());
      samples.conditions.push_back(cv);
    }
    write_pointcloud_csv(samples, (out / "samples.csv").string());
  } else {
    const McDiffusion model = load_diffusion_checkpoint(model_path);
    const ConditionVector cv = parse_condition_assignments(model.schema(), assignments);
    ImageDataset samples;
    samples.schema = model.schema();
    samples.conditions.assign(count, cv);
    samples.images = sample(model, samples.conditions, rng);
    for (std::size_t i = 0; i < count; ++i) samples.filenames.push_back("sample" + std::to_string(i) + ".png");
    write_image_dataset(samples, (out / "samples").string());
  }
  log << "wrote " << count << " samples to " << out.string() << '\n';
}

}  // namespace

ConditionVector parse_condition_assignments(const ConditionSchema& schema, const std::vector<std::string>& assignments) {
  ConditionVector cv = ConditionVector::all_masked(schema);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "condition '" + a + "' is not name=value");
    const std::string name = a.substr(0, eq), value = a.substr(eq + 1);
    bool found = false;
    for (std::size_t i = 0; i < schema.k_cat(); ++i) {
      if (schema.categorical[i].name != name) continue;
      found = true;
      if (value.empty()) break;
      const auto& cats = schema.categorical[i].categories;
      const auto it = std::find(cats.begin(), cats.end(), value);
      if (it == cats.end()) throw Error(Errc::UnknownCategoryLabel, "'" + value + "' for feature '" + name + "'");
      cv.categorical[i] = ObservedCategory{static_cast<std::size_t>(it - cats.begin())};
    }
    for (std::size_t j = 0; j < schema.k_num() && !found; ++j) {
      if (schema.numerical[j].name != name) continue;
      found = true;
      if (value.empty()) break;
      double raw = 0.0;
      if (!csv::parse_double(value, raw)) throw Error(Errc::MalformedNumber, "'" + value + "' for feature '" + name + "'");
      cv.numerical[j] = ObservedValue{std::clamp(schema.numerical[j].normalize(raw), 0.0, 1.0)};
    }
    if (!found) throw Error(Errc::SchemaMismatch, "no condition feature named '" + name + "'");
  }
  return cv;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-conditioning generative models: data, training, sweeps"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "Experiment config JSON");
    sub->add_option("--data", c.data, "Dataset directory");
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--seed", c.seed, "Seed for all randomness");
    sub->add_flag("--svg", c.svg, "Also write SVG charts");
  };

  std::size_t samples = 2000, images = 0, image_size = 0;
  auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic oracle dataset");
  add_common(gen);
  gen->add_option("--samples", samples, "Number of point clouds")->check(CLI::PositiveNumber);
  gen->add_option("--images", images, "Number of rendered images (0: none)");
  gen->add_option("--image-size", image_size, "Rendered image side length (default: diffusion config)");

  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  auto* train_vae_cmd = train->add_subcommand("vae", "Train the masked-conditioning VAE");
  add_common(train_vae_cmd);
  auto* train_dm_cmd = train->add_subcommand("dm", "Train the masked-conditioning diffusion model");
  add_common(train_dm_cmd);

  std::string model_path;
  std::vector<double> levels;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  eval->require_subcommand(1);
  auto* eval_sparsity = eval->add_subcommand("sparsity", "MSE against inference sparsity");
  add_common(eval_sparsity);
  eval_sparsity->add_option("--model", model_path, "Checkpoint file")->required();
  eval_sparsity->add_option("--levels", levels, "Comma-separated sparsity levels")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "Run a sweep");
  sweep->require_subcommand(1);
  auto* sweep_size = sweep->add_subcommand("size", "Dataset-size sweep");
  add_common(sweep_size);

  auto* compare = app.add_subcommand("compare-schedules", "Compare training sparsity schedules");
  add_common(compare);

  std::vector<std::string> assignments;
  std::size_t count = 1;
  auto* sample_cmd = app.add_subcommand("sample", "Generate from a checkpoint");
  add_common(sample_cmd);
  sample_cmd->add_option("--model", model_path, "Checkpoint file")->required();
  sample_cmd->add_option("--condition", assignments, "name=value; unspecified features are masked");
  sample_cmd->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) cmd_gen_synth(c, samples, images, image_size, out);
    else if (train_vae_cmd->parsed()) cmd_train_vae(c, out);
    else if (train_dm_cmd->parsed()) cmd_train_dm(c, out);
    else if (eval_sparsity->parsed()) cmd_eval_sparsity(c, model_path, levels, out);
    else if (sweep_size->parsed()) cmd_sweep_size(c, out);
    else if (compare->parsed()) cmd_compare_schedules(c, out);
    else if (sample_cmd->parsed()) cmd_sample(c, model_path, assignments, count, out);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"maskcond"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace maskcond::cli
