#include "popcorn/nd.hpp"

#include <cmath>
#include <sstream>

#include "popcorn/errors.hpp"

namespace popcorn {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  out += ")";
  return out;
}

NdArray::NdArray(Shape s) : shape(std::move(s)) {
  for (auto d : shape) {
    if (d < 1) throw Error("NdArray: all dimensions must be >= 1, got " + shape_str(shape));
  }
  data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
}

NdArray::NdArray(Shape s, double fill) : NdArray(std::move(s)) {
  data.assign(data.size(), fill);
}

bool same_shape(const NdArray& a, const NdArray& b) { return a.shape == b.shape; }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt + 0x51b0944fULL));
}

std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

double Rng::uniform() {
  // 53 high bits -> [0,1) on the dyadic grid
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // u1 in (0,1] so the log is finite
  double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
  if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
  const auto un = static_cast<std::uint64_t>(n);
  const std::uint64_t bound = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x = next();
  while (x >= bound) x = next();
  return static_cast<std::int64_t>(x % un);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw DataError("Rng: malformed serialized state");
}

}  // namespace popcorn
