#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "popcorn/pairing.hpp"
#include "popcorn/synth.hpp"
#include "popcorn/unet.hpp"

namespace popcorn {

// Training arms. NoCr is Popcorn with the consistency weight forced to zero;
// Baseline trains on labeled data only with the single-patch loss;
// BaselineCr trains on labeled data only but keeps pairs + consistency;
// RandomSelect replaces proximity selection with uniform random selection.
enum class Strategy { Popcorn, NoCr, RandomSelect, Baseline, BaselineCr };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct TrainerConfig {
  Strategy strategy = Strategy::Popcorn;
  int k = 200;             // promotions per cycle
  int n = 2;               // training epochs per cycle
  int p = 5;               // neighbors for the proximity score
  double alpha = 0.2;      // consistency weight
  double threshold = 0.5;  // pseudo-label binarization, strict >
  double lr = 1e-4;
  int initial_epochs = 40;
  int patience = 5;
  int batch_size = 4;
  int max_cycles = 0;        // 0 means run until the unlabeled pool drains
  double val_fraction = 0.2; // labeled fraction carved off for validation

  bool operator==(const TrainerConfig&) const = default;
};

void validate_trainer_config(const TrainerConfig& c);

// The full sectioned run configuration. Precedence when assembling one:
// CLI flags > POPCORN_SEED environment variable (seed only) > config file
// > built-in defaults. The seed must be set by some layer.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string dataset_dir;
  std::string out_dir;
  bool reproducible = false;  // zero timestamps in logs for byte comparisons
  std::string eval_label;     // display label override; empty = strategy name
  SynthConfig synth;
  ModelConfig model;
  AugmentConfig augment;
  PairPolicy pairing;
  TrainerConfig trainer;

  bool operator==(const RunConfig&) const = default;
};

void validate_run_config(const RunConfig& c);

nlohmann::json synth_to_json(const SynthConfig& c);
SynthConfig synth_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const ModelConfig& c);
ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json augment_to_json(const AugmentConfig& c);
AugmentConfig augment_from_json(const nlohmann::json& j);
nlohmann::json pairing_to_json(const PairPolicy& c);
PairPolicy pairing_from_json(const nlohmann::json& j);
nlohmann::json trainer_to_json(const TrainerConfig& c);
TrainerConfig trainer_from_json(const nlohmann::json& j);

// Strict parsers: unknown keys anywhere are a ConfigError; absent keys keep
// their defaults. to_json always emits every key, so a round trip through
// JSON reproduces an equal RunConfig.
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

// Applies the POPCORN_SEED environment variable, if present.
void apply_env_seed(RunConfig& c);

}  // namespace popcorn
