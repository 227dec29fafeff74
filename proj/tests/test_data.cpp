#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "popcorn/data.hpp"
#include "popcorn/errors.hpp"

using namespace popcorn;

namespace {

NdArray ramp(std::int64_t h, std::int64_t w) {
  NdArray a({h, w});
  for (std::int64_t i = 0; i < h * w; ++i) a[i] = static_cast<double>(i);
  return a;
}

Sample make_unlabeled(const std::string& id) {
  Sample s;
  s.id = id;
  s.volume = make_volume(NdArray({4, 4}, 0.5));
  s.provenance = Provenance::Unlabeled;
  return s;
}

Mask full_mask(const Shape& shape, double v) {
  Mask m;
  m.voxels = NdArray(shape, v);
  return m;
}

}  // namespace

TEST_CASE("make_volume defaults spacing to 1 per axis") {
  Volume v = make_volume(NdArray({3, 5}));
  REQUIRE(v.spacing.size() == 2);
  CHECK(v.spacing[0] == 1.0);
  CHECK(v.spacing[1] == 1.0);
  CHECK_NOTHROW(validate_volume(v));
}

TEST_CASE("validate_volume rejects bad spacing and non-finite voxels") {
  Volume v = make_volume(NdArray({2, 2}));
  v.spacing = {1.0};
  CHECK_THROWS_AS(validate_volume(v), DataError);

  Volume w = make_volume(NdArray({2, 2}));
  w.spacing = {0.0, 1.0};
  CHECK_THROWS_AS(validate_volume(w), DataError);

  Volume u = make_volume(NdArray({2, 2}));
  u.voxels[1] = std::nan("");
  CHECK_THROWS_AS(validate_volume(u), DataError);
}

TEST_CASE("validate_mask accepts exactly 0/1 and nothing else") {
  CHECK_NOTHROW(validate_mask(full_mask({2, 2}, 0.0)));
  CHECK_NOTHROW(validate_mask(full_mask({2, 2}, 1.0)));
  CHECK_THROWS_AS(validate_mask(full_mask({2, 2}, 0.5)), DataError);
  CHECK_THROWS_AS(validate_mask(full_mask({2, 2}, -1.0)), DataError);
  CHECK_THROWS_AS(validate_mask(full_mask({2, 2}, 2.0)), DataError);
}

TEST_CASE("validate_mask_for checks the volume shape") {
  CHECK_NOTHROW(validate_mask_for(full_mask({2, 3}, 1.0), Shape{2, 3}));
  CHECK_THROWS_AS(validate_mask_for(full_mask({2, 3}, 1.0), Shape{3, 2}), DataError);
}

TEST_CASE("crop: 4x4 ramp at origin (1,1) size (2,2) gives {5,6,9,10}") {
  // v[i,j] = i*W + j; hand-checked index arithmetic.
  NdArray v = ramp(4, 4);
  PatchSpec spec;
  spec.origin = {1, 1};
  spec.size = {2, 2};
  NdArray out = crop(v, spec);
  REQUIRE(out.shape == Shape{2, 2});
  CHECK(out[0] == 5.0);
  CHECK(out[1] == 6.0);
  CHECK(out[2] == 9.0);
  CHECK(out[3] == 10.0);
}

TEST_CASE("crop full extent is the identity") {
  NdArray v = ramp(3, 5);
  PatchSpec spec;
  spec.origin = {0, 0};
  spec.size = {3, 5};
  NdArray out = crop(v, spec);
  CHECK(out.shape == v.shape);
  CHECK(out.data == v.data);
}

TEST_CASE("crop rejects out-of-bounds and rank mismatch") {
  NdArray v = ramp(4, 4);
  PatchSpec spec;
  spec.origin = {3, 3};
  spec.size = {2, 2};
  CHECK_THROWS_AS(crop(v, spec), DataError);

  spec.origin = {-1, 0};
  spec.size = {2, 2};
  CHECK_THROWS_AS(crop(v, spec), DataError);

  spec.origin = {0};
  spec.size = {2};
  CHECK_THROWS_AS(crop(v, spec), DataError);
}

TEST_CASE("crop on 3D volumes") {
  NdArray v({2, 3, 4});
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  PatchSpec spec;
  spec.origin = {1, 1, 2};
  spec.size = {1, 2, 2};
  NdArray out = crop(v, spec);
  REQUIRE(out.shape == Shape{1, 2, 2});
  // linear index = z*12 + y*4 + x
  CHECK(out[0] == 1 * 12 + 1 * 4 + 2);
  CHECK(out[1] == 1 * 12 + 1 * 4 + 3);
  CHECK(out[2] == 1 * 12 + 2 * 4 + 2);
  CHECK(out[3] == 1 * 12 + 2 * 4 + 3);
}

TEST_CASE("extract_patch keeps spacing") {
  Volume v = make_volume(ramp(4, 4));
  v.spacing = {2.0, 3.0};
  PatchSpec spec;
  spec.origin = {1, 1};
  spec.size = {2, 2};
  Volume p = extract_patch(v, spec);
  CHECK(p.voxels.shape == Shape{2, 2});
  CHECK(p.spacing == std::vector<double>{2.0, 3.0});
  CHECK(p.voxels[0] == 5.0);
}

TEST_CASE("validate_sample enforces provenance/mask consistency") {
  Sample s = make_unlabeled("u0");
  CHECK_NOTHROW(validate_sample(s));

  // Labeled requires a mask.
  Sample lab = make_unlabeled("l0");
  lab.provenance = Provenance::Labeled;
  CHECK_THROWS_AS(validate_sample(lab), DataError);
  lab.mask = full_mask({4, 4}, 1.0);
  CHECK_NOTHROW(validate_sample(lab));

  // Pseudo requires mask and cycle.
  Sample ps = make_unlabeled("p0");
  ps.provenance = Provenance::Pseudo;
  ps.mask = full_mask({4, 4}, 0.0);
  CHECK_THROWS_AS(validate_sample(ps), DataError);
  ps.pseudo_cycle = 1;
  CHECK_NOTHROW(validate_sample(ps));

  // Unlabeled must not carry a cycle.
  Sample u = make_unlabeled("u1");
  u.pseudo_cycle = 2;
  CHECK_THROWS_AS(validate_sample(u), DataError);

  // Empty id is invalid.
  Sample e = make_unlabeled("");
  CHECK_THROWS_AS(validate_sample(e), DataError);
}

TEST_CASE("provenance_name round trip") {
  CHECK(std::string(provenance_name(Provenance::Labeled)) == "labeled");
  CHECK(std::string(provenance_name(Provenance::Pseudo)) == "pseudo");
  CHECK(std::string(provenance_name(Provenance::Unlabeled)) == "unlabeled");
}

TEST_CASE("promote moves samples, attaches masks, conserves counts") {
  DatasetPool pool;
  pool.unlabeled.push_back(make_unlabeled("u0"));
  pool.unlabeled.push_back(make_unlabeled("u1"));
  pool.unlabeled.push_back(make_unlabeled("u2"));
  Sample lab = make_unlabeled("l0");
  lab.provenance = Provenance::Labeled;
  lab.mask = full_mask({4, 4}, 0.0);
  pool.training.push_back(lab);

  std::vector<Mask> masks = {full_mask({4, 4}, 1.0), full_mask({4, 4}, 0.0)};
  promote(pool, {"u2", "u0"}, masks, 3);

  CHECK(pool.training.size() == 3);
  CHECK(pool.unlabeled.size() == 1);
  CHECK(pool.unlabeled[0].id == "u1");

  bool found_u2 = false, found_u0 = false;
  for (const auto& s : pool.training) {
    if (s.id == "u2") {
      found_u2 = true;
      CHECK(s.provenance == Provenance::Pseudo);
      REQUIRE(s.mask.has_value());
      CHECK(s.mask->voxels[0] == 1.0);
      REQUIRE(s.pseudo_cycle.has_value());
      CHECK(*s.pseudo_cycle == 3);
    }
    if (s.id == "u0") {
      found_u0 = true;
      REQUIRE(s.mask.has_value());
      CHECK(s.mask->voxels[0] == 0.0);
    }
  }
  CHECK(found_u2);
  CHECK(found_u0);
}

TEST_CASE("promote rejects unknown ids, duplicates, and arity mismatch") {
  DatasetPool pool;
  pool.unlabeled.push_back(make_unlabeled("u0"));
  pool.unlabeled.push_back(make_unlabeled("u1"));

  std::vector<Mask> one = {full_mask({4, 4}, 0.0)};
  std::vector<Mask> two = {full_mask({4, 4}, 0.0), full_mask({4, 4}, 0.0)};

  DatasetPool p1 = pool;
  CHECK_THROWS_AS(promote(p1, {"nope"}, one, 1), DataError);

  DatasetPool p2 = pool;
  CHECK_THROWS_AS(promote(p2, {"u0", "u0"}, two, 1), DataError);

  DatasetPool p3 = pool;
  CHECK_THROWS_AS(promote(p3, {"u0", "u1"}, one, 1), DataError);

  // Mask shape must match the sample volume.
  DatasetPool p4 = pool;
  std::vector<Mask> wrong = {full_mask({2, 2}, 0.0)};
  CHECK_THROWS_AS(promote(p4, {"u0"}, wrong, 1), DataError);
}

TEST_CASE("promote of zero ids is a no-op") {
  DatasetPool pool;
  pool.unlabeled.push_back(make_unlabeled("u0"));
  promote(pool, {}, {}, 1);
  CHECK(pool.unlabeled.size() == 1);
  CHECK(pool.training.empty());
}

TEST_CASE("normalize_intensities gives zero mean and unit variance") {
  Volume v = make_volume(ramp(4, 4));
  normalize_intensities(v);
  double sum = 0, sum2 = 0;
  for (std::int64_t i = 0; i < v.voxels.size(); ++i) {
    sum += v.voxels[i];
    sum2 += v.voxels[i] * v.voxels[i];
  }
  double n = static_cast<double>(v.voxels.size());
  CHECK(std::abs(sum / n) < 1e-12);
  CHECK(std::abs(sum2 / n - 1.0) < 1e-12);
}

TEST_CASE("normalize_intensities maps constant volumes to zero") {
  Volume v = make_volume(NdArray({3, 3}, 42.0));
  normalize_intensities(v);
  for (std::int64_t i = 0; i < v.voxels.size(); ++i) CHECK(v.voxels[i] == 0.0);
}

TEST_CASE("normalize_intensities is idempotent on normalized data") {
  Volume v = make_volume(ramp(5, 5));
  normalize_intensities(v);
  Volume w = v;
  normalize_intensities(w);
  for (std::int64_t i = 0; i < v.voxels.size(); ++i)
    CHECK(w.voxels[i] == doctest::Approx(v.voxels[i]).epsilon(1e-12));
}
