#pragma once

#include <span>
#include <vector>

#include "popcorn/data.hpp"
#include "popcorn/nd.hpp"
#include "popcorn/unet.hpp"

namespace popcorn {

// Soft overlap loss between a probability map and a binary target:
//   1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)
// eps keeps the ratio defined when both maps are empty. Inputs must have the
// same element count; layout is irrelevant, the reduction is elementwise.
double dice_loss(const NdArray& pred, const NdArray& target, double eps = 1.0);
NdArray dice_loss_grad(const NdArray& pred, const NdArray& target, double eps = 1.0);

// exp(-mean((a-b)^2)) over two probability maps; in (0,1], equal to 1 iff
// the maps are identical. Used as a constant weight: nothing differentiates
// through it.
double prediction_similarity(const NdArray& a, const NdArray& b);

// Normalized squared distance of two feature vectors, range [0, 4]:
//   2*|a-b|^2 / (|a|^2 + |b|^2 + eps)
// 0 iff a == b, 4 iff a == -b (nonzero).
double feature_distance(std::span<const double> a, std::span<const double> b,
                        double eps = 1e-8);

struct FeatureDistanceGrad {
  std::vector<double> da, db;
};

FeatureDistanceGrad feature_distance_grad(std::span<const double> a,
                                          std::span<const double> b, double eps = 1e-8);

// prediction_similarity(pred_i, pred_j) * feature_distance(h_i, h_j).
// The similarity factor scales the distance gradient but receives none itself.
double consistency_loss(const NdArray& pred_i, const NdArray& pred_j,
                        std::span<const double> h_i, std::span<const double> h_j);

enum class PairKind { AugSame, CrossImage };

// One training pair: two patches with their targets. AugSame pairs share a
// source crop and differ only by augmentation; CrossImage pairs come from two
// different samples.
struct PairItem {
  Volume patch_i, patch_j;
  Mask y_i, y_j;
  PairKind kind = PairKind::AugSame;
};

struct LossReport {
  double seg_i = 0.0;
  double seg_j = 0.0;
  double reg = 0.0;    // consistency term, reported even when alpha == 0
  double total = 0.0;  // seg_i + seg_j + alpha * reg
  double alpha = 0.0;
};

// Forward-only evaluation of the pair objective.
LossReport total_loss(const Model& m, const PairItem& pair, double alpha);

// Forward + backward. Adds parameter gradients into `grads` (both patches'
// segmentation terms, plus the consistency term unless alpha == 0, in which
// case the latent path is skipped entirely).
LossReport total_loss_grad(const Model& m, const PairItem& pair, double alpha, Model& grads);

// Plain single-patch objective for the non-paired training arm.
double single_dice_loss(const Model& m, const Volume& patch, const Mask& y);
double single_dice_loss_grad(const Model& m, const Volume& patch, const Mask& y, Model& grads);

}  // namespace popcorn
