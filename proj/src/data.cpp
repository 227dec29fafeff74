#include "popcorn/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "popcorn/errors.hpp"

namespace popcorn {

Volume make_volume(NdArray voxels) {
  Volume v;
  v.spacing.assign(voxels.shape.size(), 1.0);
  v.voxels = std::move(voxels);
  return v;
}

void validate_volume(const Volume& v) {
  if (v.voxels.rank() < 1) throw DataError("Volume: rank must be >= 1");
  for (auto d : v.voxels.shape) {
    if (d < 1) throw DataError("Volume: all dimensions must be >= 1");
  }
  if (v.spacing.size() != v.voxels.shape.size())
    throw DataError("Volume: spacing length must match rank");
  for (double s : v.spacing) {
    if (!(s > 0.0)) throw DataError("Volume: spacing must be positive");
  }
  if (!all_finite(v.voxels.data))
    throw DataError("Volume: non-finite voxel values");
}

void validate_mask(const Mask& m) {
  for (double x : m.voxels.data) {
    if (x != 0.0 && x != 1.0) throw DataError("Mask: values must be exactly 0 or 1");
  }
}

void validate_mask_for(const Mask& m, const Shape& volume_shape) {
  validate_mask(m);
  if (m.voxels.shape != volume_shape)
    throw DataError("Mask: shape " + shape_str(m.voxels.shape) +
                " does not match volume shape " + shape_str(volume_shape));
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Labeled: return "labeled";
    case Provenance::Pseudo: return "pseudo";
    case Provenance::Unlabeled: return "unlabeled";
  }
  return "?";
}

void validate_sample(const Sample& s) {
  if (s.id.empty()) throw DataError("Sample: empty id");
  validate_volume(s.volume);
  const bool needs_mask = s.provenance != Provenance::Unlabeled;
  if (needs_mask && !s.mask)
    throw DataError("Sample " + s.id + ": " + provenance_name(s.provenance) + " sample requires a mask");
  if (!needs_mask && s.mask)
    throw DataError("Sample " + s.id + ": unlabeled sample must not carry a mask");
  if (s.mask) validate_mask_for(*s.mask, s.volume.voxels.shape);
  if (s.pseudo_cycle.has_value() != (s.provenance == Provenance::Pseudo))
    throw DataError("Sample " + s.id + ": pseudo_cycle present iff provenance is pseudo");
}

static void check_spec(const Shape& shape, const PatchSpec& spec) {
  if (spec.origin.size() != shape.size() || spec.size.size() != shape.size())
    throw DataError("PatchSpec: rank mismatch with array of shape " + shape_str(shape));
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (spec.origin[a] < 0 || spec.size[a] < 1 || spec.origin[a] + spec.size[a] > shape[a])
      throw DataError("PatchSpec: box [" + std::to_string(spec.origin[a]) + "," +
                  std::to_string(spec.origin[a] + spec.size[a]) + ") out of bounds on axis " +
                  std::to_string(a) + " of " + shape_str(shape));
  }
}

NdArray crop(const NdArray& a, const PatchSpec& spec) {
  check_spec(a.shape, spec);
  NdArray out(spec.size);
  const int r = a.rank();
  // row-major strides of the source
  std::vector<std::int64_t> stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) stride[i] = stride[i + 1] * a.shape[i + 1];

  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const std::int64_t n = out.size();
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t src = 0;
    for (int i = 0; i < r; ++i) src += (spec.origin[i] + idx[i]) * stride[i];
    out[flat] = a[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < spec.size[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

Volume extract_patch(const Volume& v, const PatchSpec& spec) {
  Volume out;
  out.voxels = crop(v.voxels, spec);
  out.spacing = v.spacing;
  return out;
}

void promote(DatasetPool& pool, const std::vector<std::string>& ids,
             std::vector<Mask> masks, int cycle) {
  if (ids.size() != masks.size())
    throw DataError("promote: ids and masks must be aligned by position");
  if (cycle < 0) throw DataError("promote: cycle must be non-negative");

  std::set<std::string> training_ids;
  for (const auto& s : pool.training) training_ids.insert(s.id);

  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::string& id = ids[k];
    if (training_ids.count(id))
      throw DataError("promote: id '" + id + "' is already in the training set");
    auto it = std::find_if(pool.unlabeled.begin(), pool.unlabeled.end(),
                           [&](const Sample& s) { return s.id == id; });
    if (it == pool.unlabeled.end())
      throw DataError("promote: unknown unlabeled id '" + id + "'");
    validate_mask_for(masks[k], it->volume.voxels.shape);

    Sample s = std::move(*it);
    pool.unlabeled.erase(it);
    s.mask = std::move(masks[k]);
    s.provenance = Provenance::Pseudo;
    s.pseudo_cycle = cycle;
    training_ids.insert(s.id);
    pool.training.push_back(std::move(s));
  }
}

void normalize_intensities(Volume& v) {
  auto& d = v.voxels.data;
  if (d.empty()) return;
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  var /= static_cast<double>(d.size());
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    for (double& x : d) x -= mean;
  } else {
    for (double& x : d) x = (x - mean) / sd;
  }
}

}  // namespace popcorn
