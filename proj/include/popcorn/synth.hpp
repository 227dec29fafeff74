#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "popcorn/data.hpp"

namespace popcorn {

// Parameters of the synthetic benchmark generator: bright ellipsoidal
// lesions on a smoothed-noise background. Unlabeled samples are drawn from
// a distribution shifted by `domain_shift` (extra blur, contrast scaling,
// background texture frequency); test samples sit between the two
// distributions (per-sample shift uniform in [0, domain_shift]).
struct SynthConfig {
  std::int64_t n_labeled = 5;
  std::int64_t n_unlabeled = 100;
  std::int64_t n_test = 20;
  Shape image_size = {64, 64};
  std::int64_t lesion_count_min = 1;
  std::int64_t lesion_count_max = 4;
  double lesion_radius_min = 3.0;
  double lesion_radius_max = 8.0;
  double domain_shift = 0.75;
  double noise_std = 0.15;

  bool operator==(const SynthConfig&) const = default;
};

void validate_synth_config(const SynthConfig& c);

struct SynthResult {
  DatasetPool pool;                      // labeled + unlabeled, raw intensities
  std::vector<Sample> test;              // with ground-truth masks
  std::map<std::string, Mask> hidden_truth;  // ground truth of unlabeled ids, evaluation-only
};

// Pure function of (config, seed). Volumes are raw (not normalized).
SynthResult synthesize_dataset(const SynthConfig& c, std::uint64_t seed);

// On-disk dataset layout rooted at `dir`:
//   manifest.json                      ids per role + generator echo
//   labeled/<id>.rt, labeled/<id>_mask.rt
//   unlabeled/<id>.rt
//   test/<id>.rt, test/<id>_mask.rt
//   hidden/manifest.json, hidden/<id>_truth.rt
// The hidden store holds ground truth of unlabeled samples for evaluation
// only; nothing in the training path reads it.
void write_dataset(const std::filesystem::path& dir, const SynthResult& r, const SynthConfig& c,
                   std::uint64_t seed);

struct LoadedDataset {
  DatasetPool pool;          // volumes normalized to zero mean, unit variance
  std::vector<Sample> test;  // normalized, with masks
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

std::map<std::string, Mask> load_hidden_truth(const std::filesystem::path& dir);

}  // namespace popcorn
