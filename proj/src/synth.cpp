#include "popcorn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "popcorn/config.hpp"
#include "popcorn/errors.hpp"
#include "popcorn/io.hpp"
#include "popcorn/kernels.hpp"

namespace popcorn {

using nlohmann::json;

void validate_synth_config(const SynthConfig& c) {
  if (c.n_labeled < 0 || c.n_unlabeled < 0 || c.n_test < 0)
    throw ConfigError("synth: sample counts must be >= 0");
  if (c.image_size.size() != 2 && c.image_size.size() != 3)
    throw ConfigError("synth.image_size: must have 2 or 3 axes");
  for (auto d : c.image_size) {
    if (d < 16) throw ConfigError("synth.image_size: every axis must be >= 16");
  }
  if (c.lesion_count_min < 0 || c.lesion_count_min > c.lesion_count_max)
    throw ConfigError("synth.lesion_count: need 0 <= min <= max");
  if (c.lesion_radius_min <= 0.0 || c.lesion_radius_min > c.lesion_radius_max)
    throw ConfigError("synth.lesion_radius: need 0 < min <= max");
  const auto min_dim = *std::min_element(c.image_size.begin(), c.image_size.end());
  if (2.0 * c.lesion_radius_max >= static_cast<double>(min_dim))
    throw ConfigError("synth.lesion_radius: 2*max must be smaller than the smallest image axis");
  if (c.domain_shift < 0.0) throw ConfigError("synth.domain_shift: must be >= 0");
  if (c.noise_std < 0.0) throw ConfigError("synth.noise_std: must be >= 0");
}

namespace {

std::string sample_id(const char* prefix, std::int64_t i, std::int64_t count) {
  std::size_t width = std::max<std::size_t>(3, std::to_string(count > 0 ? count - 1 : 0).size());
  std::string num = std::to_string(i);
  return std::string(prefix) + "_" + std::string(width - num.size(), '0') + num;
}

void rescale_unit(NdArray& a) {
  double mean = 0.0;
  for (double v : a.data) mean += v;
  mean /= static_cast<double>(a.data.size());
  double var = 0.0;
  for (double v : a.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.data.size());
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    for (double& v : a.data) v -= mean;
  } else {
    for (double& v : a.data) v = (v - mean) / sd;
  }
}

// Roles salt the per-sample rng stream: 0 labeled, 1 unlabeled, 2 test.
// Draw order per sample is fixed: shift draw, texture factor, background
// noise voxels, lesion count, per-lesion (radii, center, amplitude), shift
// blur factor, contrast factor, additive noise voxels.
Sample make_sample(const SynthConfig& c, std::uint64_t seed, int role, std::int64_t i,
                   std::int64_t count, const char* prefix) {
  Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(role) << 32) |
                                static_cast<std::uint64_t>(i)));
  const double u_shift = rng.uniform();
  const double shift =
      role == 0 ? 0.0 : (role == 1 ? c.domain_shift : c.domain_shift * u_shift);
  const int rank = static_cast<int>(c.image_size.size());

  const double sigma_bg = 4.0 * (1.0 + shift * rng.uniform(-0.5, 1.0));
  NdArray img(c.image_size);
  for (auto& v : img.data) v = rng.normal();
  img = kernels::gaussian_blur(img, sigma_bg);
  rescale_unit(img);
  for (auto& v : img.data) v *= 0.35;

  NdArray mask_arr(c.image_size);
  const std::int64_t n_les =
      c.lesion_count_min + rng.uniform_int(c.lesion_count_max - c.lesion_count_min + 1);
  std::vector<std::int64_t> stride(static_cast<std::size_t>(rank), 1);
  for (int a = rank - 2; a >= 0; --a) stride[a] = stride[a + 1] * c.image_size[a + 1];

  for (std::int64_t l = 0; l < n_les; ++l) {
    std::vector<double> radius(static_cast<std::size_t>(rank));
    for (auto& r : radius) r = rng.uniform(c.lesion_radius_min, c.lesion_radius_max);
    std::vector<double> center(static_cast<std::size_t>(rank));
    for (int a = 0; a < rank; ++a)
      center[a] = rng.uniform(radius[a], static_cast<double>(c.image_size[a]) - radius[a]);
    const double amp = rng.uniform(0.8, 1.2);

    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    for (std::int64_t flat = 0; flat < img.size(); ++flat) {
      double d2 = 0.0;
      for (int a = 0; a < rank; ++a) {
        const double t = (static_cast<double>(idx[a]) - center[a]) / radius[a];
        d2 += t * t;
      }
      // plateau inside the ellipsoid, exponential falloff outside
      img[flat] += d2 <= 1.0 ? amp : amp * std::exp(-4.0 * (d2 - 1.0));
      if (d2 <= 1.0) mask_arr[flat] = 1.0;
      for (int a = rank - 1; a >= 0; --a) {
        if (++idx[a] < c.image_size[a]) break;
        idx[a] = 0;
      }
    }
  }

  const double sigma_shift = shift * rng.uniform(0.2, 1.2);
  img = kernels::gaussian_blur(img, sigma_shift);
  const double contrast = 1.0 + shift * rng.uniform(-0.4, 0.4);
  for (auto& v : img.data) v *= contrast;
  for (auto& v : img.data) v += c.noise_std * rng.normal();

  Sample s;
  s.id = sample_id(prefix, i, count);
  s.volume = make_volume(std::move(img));
  s.mask = Mask{std::move(mask_arr)};
  s.provenance = Provenance::Labeled;
  return s;
}

}  // namespace

SynthResult synthesize_dataset(const SynthConfig& c, std::uint64_t seed) {
  validate_synth_config(c);
  SynthResult r;
  for (std::int64_t i = 0; i < c.n_labeled; ++i)
    r.pool.training.push_back(make_sample(c, seed, 0, i, c.n_labeled, "lab"));
  for (std::int64_t i = 0; i < c.n_unlabeled; ++i) {
    Sample s = make_sample(c, seed, 1, i, c.n_unlabeled, "unl");
    r.hidden_truth.emplace(s.id, std::move(*s.mask));
    s.mask.reset();
    s.provenance = Provenance::Unlabeled;
    r.pool.unlabeled.push_back(std::move(s));
  }
  for (std::int64_t i = 0; i < c.n_test; ++i)
    r.test.push_back(make_sample(c, seed, 2, i, c.n_test, "tst"));
  return r;
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const SynthResult& r, const SynthConfig& c,
                   std::uint64_t seed) {
  std::filesystem::create_directories(dir / "labeled");
  std::filesystem::create_directories(dir / "unlabeled");
  std::filesystem::create_directories(dir / "test");
  std::filesystem::create_directories(dir / "hidden");

  json ids;
  ids["labeled"] = json::array();
  ids["unlabeled"] = json::array();
  ids["test"] = json::array();

  for (const auto& s : r.pool.training) {
    ids["labeled"].push_back(s.id);
    save_volume(dir / "labeled" / (s.id + ".rt"), s.volume, VolumeFormat::RawTensor, RawDType::F32);
    save_raw_tensor(dir / "labeled" / (s.id + "_mask.rt"), s.mask->voxels, RawDType::F32);
  }
  for (const auto& s : r.pool.unlabeled) {
    ids["unlabeled"].push_back(s.id);
    save_volume(dir / "unlabeled" / (s.id + ".rt"), s.volume, VolumeFormat::RawTensor,
                RawDType::F32);
    auto it = r.hidden_truth.find(s.id);
    if (it == r.hidden_truth.end())
      throw Error("write_dataset: missing hidden truth for " + s.id);
    save_raw_tensor(dir / "hidden" / (s.id + "_truth.rt"), it->second.voxels, RawDType::F32);
  }
  for (const auto& s : r.test) {
    ids["test"].push_back(s.id);
    save_volume(dir / "test" / (s.id + ".rt"), s.volume, VolumeFormat::RawTensor, RawDType::F32);
    save_raw_tensor(dir / "test" / (s.id + "_mask.rt"), s.mask->voxels, RawDType::F32);
  }

  json hidden;
  hidden["ids"] = ids["unlabeled"];
  write_text_file(dir / "hidden" / "manifest.json", hidden.dump(2) + "\n");

  json manifest;
  manifest["format"] = "rt";
  manifest["ids"] = ids;
  manifest["image_size"] = c.image_size;
  manifest["seed"] = seed;
  manifest["synth"] = synth_to_json(c);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

Volume load_normalized(const std::filesystem::path& path) {
  Volume v = load_volume(path, VolumeFormat::RawTensor);
  normalize_intensities(v);
  return v;
}

Mask load_mask_file(const std::filesystem::path& path, const Shape& volume_shape) {
  Mask m{load_raw_tensor(path)};
  validate_mask_for(m, volume_shape);
  return m;
}

std::vector<std::string> id_list(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array())
    throw DataError(std::string("dataset manifest: missing id list '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : j[key]) {
    if (!v.is_string()) throw DataError("dataset manifest: ids must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("ids")) throw DataError("dataset manifest: missing 'ids'");
  const json& ids = manifest["ids"];

  LoadedDataset out;
  for (const auto& id : id_list(ids, "labeled")) {
    Sample s;
    s.id = id;
    s.volume = load_normalized(dir / "labeled" / (id + ".rt"));
    s.mask = load_mask_file(dir / "labeled" / (id + "_mask.rt"), s.volume.voxels.shape);
    s.provenance = Provenance::Labeled;
    out.pool.training.push_back(std::move(s));
  }
  for (const auto& id : id_list(ids, "unlabeled")) {
    Sample s;
    s.id = id;
    s.volume = load_normalized(dir / "unlabeled" / (id + ".rt"));
    s.provenance = Provenance::Unlabeled;
    out.pool.unlabeled.push_back(std::move(s));
  }
  for (const auto& id : id_list(ids, "test")) {
    Sample s;
    s.id = id;
    s.volume = load_normalized(dir / "test" / (id + ".rt"));
    s.mask = load_mask_file(dir / "test" / (id + "_mask.rt"), s.volume.voxels.shape);
    s.provenance = Provenance::Labeled;
    out.test.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, Mask> load_hidden_truth(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "hidden" / "manifest.json");
  std::map<std::string, Mask> out;
  for (const auto& id : id_list(manifest, "ids")) {
    Mask m{load_raw_tensor(dir / "hidden" / (id + "_truth.rt"))};
    validate_mask(m);
    out.emplace(id, std::move(m));
  }
  return out;
}

}  // namespace popcorn
