#pragma once

#include <optional>
#include <string>
#include <vector>

#include "popcorn/nd.hpp"

namespace popcorn {

// One image volume. Intensities are arbitrary units; spacing is per-axis mm.
struct Volume {
  NdArray voxels;
  std::vector<double> spacing;  // same length as voxels.shape
};

Volume make_volume(NdArray voxels);  // spacing defaults to 1.0 per axis
void validate_volume(const Volume& v);

// Binary segmentation, values exactly 0 or 1.
struct Mask {
  NdArray voxels;
};

void validate_mask(const Mask& m);
void validate_mask_for(const Mask& m, const Shape& volume_shape);

enum class Provenance { Labeled, Pseudo, Unlabeled };
const char* provenance_name(Provenance p);

struct Sample {
  std::string id;
  Volume volume;
  std::optional<Mask> mask;
  Provenance provenance = Provenance::Unlabeled;
  std::optional<int> pseudo_cycle;  // present iff provenance == Pseudo
};

void validate_sample(const Sample& s);

// The T / U partition. `training` holds LABELED and PSEUDO samples,
// `unlabeled` holds UNLABELED ones; id sets stay disjoint.
struct DatasetPool {
  std::vector<Sample> training;
  std::vector<Sample> unlabeled;
};

enum class Orientation { Canonical };

struct PatchSpec {
  std::vector<std::int64_t> origin;
  std::vector<std::int64_t> size;
  Orientation orientation = Orientation::Canonical;
};

// Axis-aligned box copy over [origin, origin+size). Throws on out-of-bounds.
NdArray crop(const NdArray& a, const PatchSpec& spec);
Volume extract_patch(const Volume& v, const PatchSpec& spec);

// Moves the named unlabeled samples into training with provenance PSEUDO,
// attaching the given masks (aligned by position) and the cycle index.
// Total sample count is conserved; id sets stay disjoint.
void promote(DatasetPool& pool, const std::vector<std::string>& ids,
             std::vector<Mask> masks, int cycle);

// Zero-mean unit-variance rescale; the fixed normalization applied when
// building training pools from files. Constant volumes end up all-zero.
void normalize_intensities(Volume& v);

}  // namespace popcorn
