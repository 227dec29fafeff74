// Timing comparison of the serial reference kernels against the OpenMP
// versions, plus a bitwise equality check on every measured case.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "popcorn/kernels.hpp"
#include "popcorn/nd.hpp"

using namespace popcorn;
using kernels::Exec;

namespace {

NdArray random_array(const Shape& s, Rng& rng) {
  NdArray a(s);
  for (auto& v : a.data) v = rng.normal();
  return a;
}

double seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool bitwise_equal(const NdArray& a, const NdArray& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, seconds(t0));
  }
  return best;
}

void row(const char* name, double serial_s, double parallel_s, bool equal) {
  std::printf("%-28s %10.4f %10.4f %8.2fx   %s\n", name, serial_s * 1e3, parallel_s * 1e3,
              serial_s / parallel_s, equal ? "bitwise equal" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(7);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "openmp ms", "speedup");

  {
    const NdArray x = random_array({8, 96, 96}, rng);
    const NdArray w = random_array({16, 8, 3, 3}, rng);
    std::vector<double> bias(16, 0.1);
    NdArray out_s, out_p;
    const double ts =
        time_best_of(3, [&] { out_s = kernels::conv_forward(x, w, bias, 1, 1, Exec::Serial); });
    const double tp =
        time_best_of(3, [&] { out_p = kernels::conv_forward(x, w, bias, 1, 1, Exec::Parallel); });
    row("conv2d forward 8->16 @96^2", ts, tp, bitwise_equal(out_s, out_p));

    const NdArray gout = random_array(out_s.shape, rng);
    NdArray gi_s, gi_p;
    const double tis = time_best_of(
        3, [&] { gi_s = kernels::conv_backward_input(gout, w, {96, 96}, 1, 1, Exec::Serial); });
    const double tip = time_best_of(
        3, [&] { gi_p = kernels::conv_backward_input(gout, w, {96, 96}, 1, 1, Exec::Parallel); });
    row("conv2d backward input", tis, tip, bitwise_equal(gi_s, gi_p));

    std::pair<NdArray, std::vector<double>> gp_s, gp_p;
    const double tps = time_best_of(3, [&] {
      gp_s = kernels::conv_backward_params(gout, x, w.shape, 1, 1, Exec::Serial);
    });
    const double tpp = time_best_of(3, [&] {
      gp_p = kernels::conv_backward_params(gout, x, w.shape, 1, 1, Exec::Parallel);
    });
    row("conv2d backward params", tps, tpp,
        bitwise_equal(gp_s.first, gp_p.first) && gp_s.second == gp_p.second);
  }

  {
    const NdArray x = random_array({4, 32, 32, 32}, rng);
    const NdArray w = random_array({8, 4, 3, 3, 3}, rng);
    std::vector<double> bias(8, 0.0);
    NdArray out_s, out_p;
    const double ts =
        time_best_of(3, [&] { out_s = kernels::conv_forward(x, w, bias, 1, 1, Exec::Serial); });
    const double tp =
        time_best_of(3, [&] { out_p = kernels::conv_forward(x, w, bias, 1, 1, Exec::Parallel); });
    row("conv3d forward 4->8 @32^3", ts, tp, bitwise_equal(out_s, out_p));
  }

  {
    const NdArray x = random_array({256, 256}, rng);
    NdArray b_s, b_p;
    const double ts =
        time_best_of(3, [&] { b_s = kernels::gaussian_blur(x, 2.5, Exec::Serial); });
    const double tp =
        time_best_of(3, [&] { b_p = kernels::gaussian_blur(x, 2.5, Exec::Parallel); });
    row("gaussian blur @256^2", ts, tp, bitwise_equal(b_s, b_p));
  }

  {
    std::vector<std::vector<double>> u(400, std::vector<double>(64));
    std::vector<std::vector<double>> t(200, std::vector<double>(64));
    for (auto& v : u)
      for (auto& x : v) x = rng.normal();
    for (auto& v : t)
      for (auto& x : v) x = rng.normal();
    NdArray d_s, d_p;
    const double ts =
        time_best_of(3, [&] { d_s = kernels::distance_matrix(u, t, Exec::Serial); });
    const double tp =
        time_best_of(3, [&] { d_p = kernels::distance_matrix(u, t, Exec::Parallel); });
    row("distance matrix 400x200x64", ts, tp, bitwise_equal(d_s, d_p));
  }

  return 0;
}
