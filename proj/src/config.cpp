#include "maskcond/config.hpp"

#include <fstream>
#include <set>

#include "maskcond/error.hpp"

namespace maskcond {

using nlohmann::json;

std::string to_string(EvalMode mode) { return mode == EvalMode::Posterior ? "posterior" : "prior"; }

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "posterior") return EvalMode::Posterior;
  if (name == "prior") return EvalMode::Prior;
  throw Error(Errc::InvalidConfig, "unknown evaluation mode '" + name + "'");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> keys;
  for (const auto& [key, value] : j.items()) keys.insert(key);
  return keys;
}

void check_schedule_keys(const json& j, const std::string& where) {
  reject_unknown(j, {"kind", "p_start", "p_end", "segments"}, where);
}

void check_levels(const std::vector<double>& levels, const std::string& where) {
  if (levels.empty()) throw Error(Errc::InvalidConfig, where + " is empty");
  for (double p : levels) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidProbability, where + " entry outside [0, 1]");
  }
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json schedules = json::array();
  for (const auto& s : cfg.schedules) schedules.push_back(schedule_to_json(s));
  return {{"vae", to_json(cfg.vae)},
          {"diffusion", to_json(cfg.diffusion)},
          {"schedule", schedule_to_json(cfg.schedule)},
          {"schedules", schedules},
          {"eval", {{"levels", cfg.eval.levels}, {"seeds", cfg.eval.seeds}, {"mode", to_string(cfg.eval.mode)}}},
          {"sweep",
           {{"sizes", cfg.sweep.sizes},
            {"train_sparsities", cfg.sweep.train_sparsities},
            {"matched_inference", cfg.sweep.matched_inference}}},
          {"synth", synth_spec_to_json(cfg.synth)},
          {"test_fraction", cfg.test_fraction}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j, {"vae", "diffusion", "schedule", "schedules", "eval", "sweep", "synth", "test_fraction"}, "config");
  ExperimentConfig cfg;
  if (j.contains("vae")) {
    reject_unknown(j["vae"], keys_of(to_json(VaeConfig{})), "vae");
    cfg.vae = vae_config_from_json(j["vae"]);
  }
  if (j.contains("diffusion")) {
    reject_unknown(j["diffusion"], keys_of(to_json(DiffusionConfig{})), "diffusion");
    cfg.diffusion = diffusion_config_from_json(j["diffusion"]);
  }
  if (j.contains("schedule")) {
    check_schedule_keys(j["schedule"], "schedule");
    cfg.schedule = schedule_from_json(j["schedule"]);
  }
  if (j.contains("schedules")) {
    if (!j["schedules"].is_array()) throw Error(Errc::InvalidConfig, "'schedules' must be an array");
    for (const auto& s : j["schedules"]) {
      check_schedule_keys(s, "schedules");
      cfg.schedules.push_back(schedule_from_json(s));
    }
  }
  if (j.contains("synth")) {
    reject_unknown(j["synth"], keys_of(synth_spec_to_json(SynthSpec{})), "synth");
    cfg.synth = synth_spec_from_json(j["synth"]);
  }
  try {
    if (j.contains("eval")) {
      const json& e = j["eval"];
      reject_unknown(e, {"levels", "seeds", "mode"}, "eval");
      cfg.eval.levels = e.value("levels", cfg.eval.levels);
      cfg.eval.seeds = e.value("seeds", cfg.eval.seeds);
      if (e.contains("mode")) cfg.eval.mode = eval_mode_from_string(e["mode"].get<std::string>());
    }
    if (j.contains("sweep")) {
      const json& s = j["sweep"];
      reject_unknown(s, {"sizes", "train_sparsities", "matched_inference"}, "sweep");
      cfg.sweep.sizes = s.value("sizes", cfg.sweep.sizes);
      cfg.sweep.train_sparsities = s.value("train_sparsities", cfg.sweep.train_sparsities);
      cfg.sweep.matched_inference = s.value("matched_inference", cfg.sweep.matched_inference);
    }
    cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("config: ") + ex.what());
  }
  check_levels(cfg.eval.levels, "eval.levels");
  check_levels(cfg.sweep.train_sparsities, "sweep.train_sparsities");
  if (cfg.eval.seeds == 0) throw Error(Errc::InvalidConfig, "eval.seeds must be positive");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "test_fraction must lie strictly between 0 and 1");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::Io, "cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, path + ": " + ex.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace maskcond
