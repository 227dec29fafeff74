#include "popcorn/pairing.hpp"

#include <string>

#include "popcorn/errors.hpp"
#include "popcorn/kernels.hpp"

namespace popcorn {

void validate_augment_config(const AugmentConfig& c) {
  if (c.blur && (c.blur_sigma_min < 0.0 || c.blur_sigma_max < c.blur_sigma_min))
    throw ConfigError("augment.blur_sigma: need 0 <= min <= max");
  if (c.sharpen && (c.sharpen_min < 0.0 || c.sharpen_max < c.sharpen_min))
    throw ConfigError("augment.sharpen: need 0 <= min <= max");
  if (c.scale && (c.scale_min <= 0.0 || c.scale_max < c.scale_min))
    throw ConfigError("augment.scale: need 0 < min <= max");
  if (c.noise && (c.noise_std_min < 0.0 || c.noise_std_max < c.noise_std_min))
    throw ConfigError("augment.noise_std: need 0 <= min <= max");
}

Volume augment(const Volume& v, const AugmentConfig& c, Rng& rng) {
  validate_augment_config(c);
  Volume out = v;
  if (c.blur) {
    const double sigma = rng.uniform(c.blur_sigma_min, c.blur_sigma_max);
    out.voxels = kernels::gaussian_blur(out.voxels, sigma);
  }
  if (c.sharpen) {
    const double s = rng.uniform(c.sharpen_min, c.sharpen_max);
    const NdArray smooth = kernels::gaussian_blur(out.voxels, 1.0);
    for (std::int64_t i = 0; i < out.voxels.size(); ++i)
      out.voxels[i] += s * (out.voxels[i] - smooth[i]);
  }
  if (c.scale) {
    const double f = rng.uniform(c.scale_min, c.scale_max);
    for (auto& x : out.voxels.data) x *= f;
  }
  if (c.noise) {
    const double std = rng.uniform(c.noise_std_min, c.noise_std_max);
    for (auto& x : out.voxels.data) x += std * rng.normal();
  }
  return out;
}

void validate_pair_policy(const PairPolicy& p) {
  if (!(p.aug_same_fraction >= 0.0 && p.aug_same_fraction <= 1.0))
    throw ConfigError("pairing.aug_same_fraction: must be in [0,1]");
}

namespace {

void check_patch_fits(const Sample& s, const Shape& patch_size) {
  const Shape& dims = s.volume.voxels.shape;
  if (dims.size() != patch_size.size())
    throw DataError("sample '" + s.id + "': rank " + std::to_string(dims.size()) +
                    " != patch rank " + std::to_string(patch_size.size()));
  for (std::size_t a = 0; a < dims.size(); ++a)
    if (dims[a] < patch_size[a])
      throw DataError("sample '" + s.id + "': shape " + shape_str(dims) +
                      " smaller than patch " + shape_str(patch_size));
}

const Mask& mask_of(const Sample& s) {
  if (!s.mask) throw DataError("sample '" + s.id + "' has no mask; cannot train on it");
  return *s.mask;
}

// One origin draw per axis, in axis order.
PatchSpec draw_origin(const Shape& bounds_shape, const Shape& patch_size,
                      Positioning positioning, Rng& rng) {
  PatchSpec spec;
  spec.size = patch_size;
  for (std::size_t a = 0; a < patch_size.size(); ++a) {
    const std::int64_t room = bounds_shape[a] - patch_size[a];
    if (positioning == Positioning::Random) {
      spec.origin.push_back(rng.uniform_int(room + 1));
    } else {
      std::vector<std::int64_t> starts;
      for (std::int64_t s = 0; s + patch_size[a] <= bounds_shape[a]; s += patch_size[a])
        starts.push_back(s);
      if (starts.back() + patch_size[a] < bounds_shape[a]) starts.push_back(room);
      spec.origin.push_back(starts[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(starts.size())))]);
    }
  }
  return spec;
}

}  // namespace

PairItem sample_pair(const std::vector<Sample>& training, const Shape& patch_size,
                     const PairPolicy& policy, const AugmentConfig& aug, Rng& rng) {
  validate_pair_policy(policy);
  if (training.empty()) throw DataError("sample_pair: training pool is empty");
  const auto n = static_cast<std::int64_t>(training.size());

  // The coin is tossed regardless of pool size so the draw sequence does not
  // depend on whether the fallback below triggers.
  const bool want_same = rng.bernoulli(policy.aug_same_fraction);
  const bool aug_same = want_same || n < 2;

  PairItem item;
  if (aug_same) {
    item.kind = PairKind::AugSame;
    const Sample& s = training[static_cast<std::size_t>(rng.uniform_int(n))];
    check_patch_fits(s, patch_size);
    const PatchSpec spec = draw_origin(s.volume.voxels.shape, patch_size,
                                       policy.positioning, rng);
    const Volume base = extract_patch(s.volume, spec);
    Mask y{crop(mask_of(s).voxels, spec)};
    item.patch_i = augment(base, aug, rng);
    item.patch_j = augment(base, aug, rng);
    item.y_i = y;
    item.y_j = std::move(y);
  } else {
    item.kind = PairKind::CrossImage;
    const std::int64_t a = rng.uniform_int(n);
    const std::int64_t b0 = rng.uniform_int(n - 1);
    const std::int64_t b = b0 >= a ? b0 + 1 : b0;
    const Sample& sa = training[static_cast<std::size_t>(a)];
    const Sample& sb = training[static_cast<std::size_t>(b)];
    check_patch_fits(sa, patch_size);
    check_patch_fits(sb, patch_size);
    Shape bounds = sa.volume.voxels.shape;
    for (std::size_t ax = 0; ax < bounds.size(); ++ax)
      bounds[ax] = std::min(bounds[ax], sb.volume.voxels.shape[ax]);
    const PatchSpec spec = draw_origin(bounds, patch_size, policy.positioning, rng);
    item.y_i = Mask{crop(mask_of(sa).voxels, spec)};
    item.y_j = Mask{crop(mask_of(sb).voxels, spec)};
    item.patch_i = augment(extract_patch(sa.volume, spec), aug, rng);
    item.patch_j = augment(extract_patch(sb.volume, spec), aug, rng);
  }
  return item;
}

SinglePatch sample_single(const std::vector<Sample>& training, const Shape& patch_size,
                          Positioning positioning, const AugmentConfig& aug, Rng& rng) {
  if (training.empty()) throw DataError("sample_single: training pool is empty");
  const auto n = static_cast<std::int64_t>(training.size());
  const Sample& s = training[static_cast<std::size_t>(rng.uniform_int(n))];
  check_patch_fits(s, patch_size);
  const PatchSpec spec = draw_origin(s.volume.voxels.shape, patch_size, positioning, rng);
  SinglePatch out;
  out.y = Mask{crop(mask_of(s).voxels, spec)};
  out.patch = augment(extract_patch(s.volume, spec), aug, rng);
  return out;
}

}  // namespace popcorn
