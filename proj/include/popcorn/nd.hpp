#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace popcorn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double array. The one tensor type used everywhere:
// volumes, masks, activations, parameters.
struct NdArray {
  Shape shape;
  std::vector<double> data;

  NdArray() = default;
  explicit NdArray(Shape s);
  NdArray(Shape s, double fill);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
};

bool same_shape(const NdArray& a, const NdArray& b);
bool all_finite(std::span<const double> v);

std::uint64_t splitmix64(std::uint64_t x);

// Stable sub-seed derivation so the independent streams (synth sample k,
// model init, trainer) never alias each other.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

std::uint64_t fnv1a64(const void* bytes, std::size_t n);
std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

// mt19937_64 with hand-rolled distributions. The standard <random>
// distributions are implementation-defined and carry hidden state, which
// would break byte-exact checkpoint resume; these helpers consume engine
// draws in a fixed, documented way (normal() always burns two draws).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();   // Box-Muller, no cached spare
  std::int64_t uniform_int(std::int64_t n);  // [0, n), rejection sampled
  bool bernoulli(double p) { return uniform() < p; }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace popcorn
