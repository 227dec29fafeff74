#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popcorn/data.hpp"

namespace popcorn {

// Voxel-count based scores for one mask pair. Empty-denominator conventions:
// a score whose denominator is zero is 1.0 and `flagged` is set, including
// the all-empty case (tp+fp+fn == 0) where every score is a flagged 1.0.
struct ImageMetrics {
  std::string id;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double dice = 0.0, precision = 0.0, sensitivity = 0.0;
  bool flagged = false;
};

ImageMetrics image_metrics(const std::string& id, const Mask& pred, const Mask& truth);

// Sums the voxel counts of all entries and recomputes the scores once over
// the pooled counts; id is "pooled".
ImageMetrics pooled_metrics(std::span<const ImageMetrics> per_image);

// Two-sided paired test on the rank of |a[i] - b[i]|. Zero differences are
// dropped; ties share midranks. Exact permutation distribution for up to 15
// nonzero differences, normal approximation with tie and continuity
// correction beyond. Fewer than 5 nonzero differences is inconclusive
// (p = 1, flagged, never "significant").
struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;
  int n_nonzero = 0;
  bool inconclusive = false;
};

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// Strict: p < 0.05 and conclusive.
bool significant(const WilcoxonResult& r);

// Everything the evaluation step produces for one trained run.
struct StrategyResult {
  std::string label;     // display name, e.g. "popcorn-half"
  std::string strategy;  // training arm name
  std::vector<std::string> test_ids;       // lexicographic
  std::vector<ImageMetrics> per_image;     // aligned with test_ids
  ImageMetrics pooled;                     // pooled voxel counts
  double mean_dice = 0.0, mean_precision = 0.0, mean_sensitivity = 0.0;
  // (cycle, validation dice) pairs from the training log; cycle 0 is the
  // state after initial training.
  std::vector<std::pair<std::int64_t, double>> curve;
};

StrategyResult make_strategy_result(std::string label, std::string strategy,
                                    std::vector<ImageMetrics> per_image,
                                    std::vector<std::pair<std::int64_t, double>> curve);

nlohmann::json strategy_result_to_json(const StrategyResult& r);
StrategyResult strategy_result_from_json(const nlohmann::json& j);

// Renders a ranked comparison of several runs over the same test set:
//   table.txt / table.tsv           per-arm scores, ranked by mean dice
//   significance.txt / significance.tsv   pairwise p-values on per-image dice
//   curves.tsv                      validation dice per cycle per arm
// All runs must share identical test id lists. Returns the table text.
std::string build_report(const std::vector<StrategyResult>& results,
                         const std::filesystem::path& out_dir);

// Fixed display mapping of an arm name to its data/regularization columns.
struct ArmDescription {
  std::string trained_on;  // "Lab" or "Lab+Pseudo"
  std::string cr_on;       // "None", "Lab", or "Lab+Pseudo"
};

ArmDescription describe_arm(const std::string& strategy);

}  // namespace popcorn
