#include "popcorn/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "popcorn/errors.hpp"

namespace popcorn {

using nlohmann::json;

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Popcorn: return "popcorn";
    case Strategy::NoCr: return "no-cr";
    case Strategy::RandomSelect: return "random-select";
    case Strategy::Baseline: return "baseline";
    case Strategy::BaselineCr: return "baseline-cr";
  }
  throw Error("strategy_name: invalid enum value");
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "popcorn") return Strategy::Popcorn;
  if (name == "no-cr") return Strategy::NoCr;
  if (name == "random-select") return Strategy::RandomSelect;
  if (name == "baseline") return Strategy::Baseline;
  if (name == "baseline-cr") return Strategy::BaselineCr;
  throw ConfigError("unknown strategy '" + name +
                    "'; expected one of popcorn, no-cr, random-select, baseline, baseline-cr");
}

void validate_trainer_config(const TrainerConfig& c) {
  if (c.k < 1) throw ConfigError("trainer.k: must be >= 1");
  if (c.n < 1) throw ConfigError("trainer.n: must be >= 1");
  if (c.p < 1) throw ConfigError("trainer.p: must be >= 1");
  if (c.alpha < 0.0) throw ConfigError("trainer.alpha: must be >= 0");
  if (!(c.threshold > 0.0 && c.threshold < 1.0))
    throw ConfigError("trainer.threshold: must be in (0,1)");
  if (!(c.lr > 0.0)) throw ConfigError("trainer.lr: must be > 0");
  if (c.initial_epochs < 0) throw ConfigError("trainer.initial_epochs: must be >= 0");
  if (c.patience < 1) throw ConfigError("trainer.patience: must be >= 1");
  if (c.batch_size < 1) throw ConfigError("trainer.batch_size: must be >= 1");
  if (c.max_cycles < 0) throw ConfigError("trainer.max_cycles: must be >= 0 (0 = unlimited)");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0))
    throw ConfigError("trainer.val_fraction: must be in [0,1)");
}

void validate_run_config(const RunConfig& c) {
  if (!c.seed_set)
    throw ConfigError("seed: required; set it in the config file, via --seed, or POPCORN_SEED");
  validate_synth_config(c.synth);
  validate_model_config(c.model);
  validate_augment_config(c.augment);
  validate_pair_policy(c.pairing);
  validate_trainer_config(c.trainer);
}

namespace {

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError((section.empty() ? std::string("config") : section) +
                      ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown config key '" +
                        (section.empty() ? item.key() : section + "." + item.key()) + "'");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + (section.empty() ? std::string(key) : section + "." + key) +
                      "' has the wrong type");
  }
}

}  // namespace

json synth_to_json(const SynthConfig& c) {
  return json{{"n_labeled", c.n_labeled},
              {"n_unlabeled", c.n_unlabeled},
              {"n_test", c.n_test},
              {"image_size", c.image_size},
              {"lesion_count_min", c.lesion_count_min},
              {"lesion_count_max", c.lesion_count_max},
              {"lesion_radius_min", c.lesion_radius_min},
              {"lesion_radius_max", c.lesion_radius_max},
              {"domain_shift", c.domain_shift},
              {"noise_std", c.noise_std}};
}

SynthConfig synth_from_json(const json& j) {
  check_keys(j, "synth",
             {"n_labeled", "n_unlabeled", "n_test", "image_size", "lesion_count_min",
              "lesion_count_max", "lesion_radius_min", "lesion_radius_max", "domain_shift",
              "noise_std"});
  SynthConfig c;
  get_if(j, "n_labeled", c.n_labeled, "synth");
  get_if(j, "n_unlabeled", c.n_unlabeled, "synth");
  get_if(j, "n_test", c.n_test, "synth");
  get_if(j, "image_size", c.image_size, "synth");
  get_if(j, "lesion_count_min", c.lesion_count_min, "synth");
  get_if(j, "lesion_count_max", c.lesion_count_max, "synth");
  get_if(j, "lesion_radius_min", c.lesion_radius_min, "synth");
  get_if(j, "lesion_radius_max", c.lesion_radius_max, "synth");
  get_if(j, "domain_shift", c.domain_shift, "synth");
  get_if(j, "noise_std", c.noise_std, "synth");
  return c;
}

json model_to_json(const ModelConfig& c) {
  return json{{"dims", c.dims},
              {"in_channels", c.in_channels},
              {"base_filters", c.base_filters},
              {"depth", c.depth},
              {"patch_size", c.patch_size}};
}

ModelConfig model_from_json(const json& j) {
  check_keys(j, "model", {"dims", "in_channels", "base_filters", "depth", "patch_size"});
  ModelConfig c;
  get_if(j, "dims", c.dims, "model");
  if (!j.contains("patch_size")) {
    c.patch_size = c.dims == 3 ? Shape{64, 64, 64} : Shape{32, 32};
  }
  get_if(j, "in_channels", c.in_channels, "model");
  get_if(j, "base_filters", c.base_filters, "model");
  get_if(j, "depth", c.depth, "model");
  get_if(j, "patch_size", c.patch_size, "model");
  return c;
}

json augment_to_json(const AugmentConfig& c) {
  return json{{"blur", c.blur},
              {"blur_sigma_min", c.blur_sigma_min},
              {"blur_sigma_max", c.blur_sigma_max},
              {"sharpen", c.sharpen},
              {"sharpen_min", c.sharpen_min},
              {"sharpen_max", c.sharpen_max},
              {"scale", c.scale},
              {"scale_min", c.scale_min},
              {"scale_max", c.scale_max},
              {"noise", c.noise},
              {"noise_std_min", c.noise_std_min},
              {"noise_std_max", c.noise_std_max}};
}

AugmentConfig augment_from_json(const json& j) {
  check_keys(j, "augment",
             {"blur", "blur_sigma_min", "blur_sigma_max", "sharpen", "sharpen_min",
              "sharpen_max", "scale", "scale_min", "scale_max", "noise", "noise_std_min",
              "noise_std_max"});
  AugmentConfig c;
  get_if(j, "blur", c.blur, "augment");
  get_if(j, "blur_sigma_min", c.blur_sigma_min, "augment");
  get_if(j, "blur_sigma_max", c.blur_sigma_max, "augment");
  get_if(j, "sharpen", c.sharpen, "augment");
  get_if(j, "sharpen_min", c.sharpen_min, "augment");
  get_if(j, "sharpen_max", c.sharpen_max, "augment");
  get_if(j, "scale", c.scale, "augment");
  get_if(j, "scale_min", c.scale_min, "augment");
  get_if(j, "scale_max", c.scale_max, "augment");
  get_if(j, "noise", c.noise, "augment");
  get_if(j, "noise_std_min", c.noise_std_min, "augment");
  get_if(j, "noise_std_max", c.noise_std_max, "augment");
  return c;
}

json pairing_to_json(const PairPolicy& c) {
  return json{{"aug_same_fraction", c.aug_same_fraction},
              {"positioning", c.positioning == Positioning::Random ? "random" : "grid"}};
}

PairPolicy pairing_from_json(const json& j) {
  check_keys(j, "pairing", {"aug_same_fraction", "positioning"});
  PairPolicy c;
  get_if(j, "aug_same_fraction", c.aug_same_fraction, "pairing");
  if (j.contains("positioning")) {
    std::string pos;
    get_if(j, "positioning", pos, "pairing");
    if (pos == "random")
      c.positioning = Positioning::Random;
    else if (pos == "grid")
      c.positioning = Positioning::Grid;
    else
      throw ConfigError("pairing.positioning: expected 'random' or 'grid', got '" + pos + "'");
  }
  return c;
}

json trainer_to_json(const TrainerConfig& c) {
  return json{{"strategy", strategy_name(c.strategy)},
              {"k", c.k},
              {"n", c.n},
              {"p", c.p},
              {"alpha", c.alpha},
              {"threshold", c.threshold},
              {"lr", c.lr},
              {"initial_epochs", c.initial_epochs},
              {"patience", c.patience},
              {"batch_size", c.batch_size},
              {"max_cycles", c.max_cycles},
              {"val_fraction", c.val_fraction}};
}

TrainerConfig trainer_from_json(const json& j) {
  check_keys(j, "trainer",
             {"strategy", "k", "n", "p", "alpha", "threshold", "lr", "initial_epochs",
              "patience", "batch_size", "max_cycles", "val_fraction"});
  TrainerConfig c;
  if (j.contains("strategy")) {
    std::string name;
    get_if(j, "strategy", name, "trainer");
    c.strategy = strategy_from_name(name);
  }
  get_if(j, "k", c.k, "trainer");
  get_if(j, "n", c.n, "trainer");
  get_if(j, "p", c.p, "trainer");
  get_if(j, "alpha", c.alpha, "trainer");
  get_if(j, "threshold", c.threshold, "trainer");
  get_if(j, "lr", c.lr, "trainer");
  get_if(j, "initial_epochs", c.initial_epochs, "trainer");
  get_if(j, "patience", c.patience, "trainer");
  get_if(j, "batch_size", c.batch_size, "trainer");
  get_if(j, "max_cycles", c.max_cycles, "trainer");
  get_if(j, "val_fraction", c.val_fraction, "trainer");
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j{{"dataset_dir", c.dataset_dir},
         {"out_dir", c.out_dir},
         {"reproducible", c.reproducible},
         {"eval", {{"label", c.eval_label}}},
         {"synth", synth_to_json(c.synth)},
         {"model", model_to_json(c.model)},
         {"augment", augment_to_json(c.augment)},
         {"pairing", pairing_to_json(c.pairing)},
         {"trainer", trainer_to_json(c.trainer)}};
  if (c.seed_set) j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "",
             {"seed", "dataset_dir", "out_dir", "reproducible", "eval", "synth", "model",
              "augment", "pairing", "trainer"});
  RunConfig c;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned())
      throw ConfigError("seed: must be a non-negative integer");
    get_if(j, "seed", c.seed, "");
    c.seed_set = true;
  }
  get_if(j, "dataset_dir", c.dataset_dir, "");
  get_if(j, "out_dir", c.out_dir, "");
  get_if(j, "reproducible", c.reproducible, "");
  if (j.contains("eval")) {
    check_keys(j.at("eval"), "eval", {"label"});
    get_if(j.at("eval"), "label", c.eval_label, "eval");
  }
  if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
  if (j.contains("pairing")) c.pairing = pairing_from_json(j.at("pairing"));
  if (j.contains("trainer")) c.trainer = trainer_from_json(j.at("trainer"));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write config: " + path.string());
  f << run_config_to_json(c).dump(2) << "\n";
  if (!f) throw DataError("config write failed: " + path.string());
}

void apply_env_seed(RunConfig& c) {
  const char* env = std::getenv("POPCORN_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || end == env || *end != '\0' || env[0] == '-')
    throw ConfigError("POPCORN_SEED: '" + std::string(env) + "' is not a valid seed");
  c.seed = static_cast<std::uint64_t>(v);
  c.seed_set = true;
}

}  // namespace popcorn
