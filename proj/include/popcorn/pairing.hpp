#pragma once

#include <vector>

#include "popcorn/data.hpp"
#include "popcorn/losses.hpp"
#include "popcorn/nd.hpp"

namespace popcorn {

// Intensity augmentations, applied in this fixed order. Parameters are drawn
// from the rng only for enabled ops, so disabling an op removes its draws.
enum class AugOp { Blur, Sharpen, Scale, Noise };

struct AugmentConfig {
  bool blur = true;
  double blur_sigma_min = 0.0, blur_sigma_max = 1.5;
  bool sharpen = true;
  double sharpen_min = 0.0, sharpen_max = 0.5;
  bool scale = true;
  double scale_min = 0.8, scale_max = 1.2;
  bool noise = true;
  double noise_std_min = 0.0, noise_std_max = 0.1;

  bool operator==(const AugmentConfig&) const = default;
};

void validate_augment_config(const AugmentConfig& c);

// Returns an augmented copy; the input is untouched. Intensity-only, so any
// mask aligned with `v` stays aligned with the result.
Volume augment(const Volume& v, const AugmentConfig& c, Rng& rng);

enum class Positioning { Random, Grid };

struct PairPolicy {
  double aug_same_fraction = 0.5;  // probability of an AugSame pair
  Positioning positioning = Positioning::Random;

  bool operator==(const PairPolicy&) const = default;
};

void validate_pair_policy(const PairPolicy& p);

// Draws one training pair from the (labeled + pseudo-labeled) pool.
// AugSame: one sample, one crop, two independent augmentations, shared target.
// CrossImage: two distinct samples, the same crop window on both.
// Falls back to AugSame when the pool has fewer than two samples.
PairItem sample_pair(const std::vector<Sample>& training, const Shape& patch_size,
                     const PairPolicy& policy, const AugmentConfig& aug, Rng& rng);

struct SinglePatch {
  Volume patch;
  Mask y;
};

// One augmented crop from one sample; the non-paired arm's analogue of
// sample_pair with the same positioning rules.
SinglePatch sample_single(const std::vector<Sample>& training, const Shape& patch_size,
                          Positioning positioning, const AugmentConfig& aug, Rng& rng);

}  // namespace popcorn
